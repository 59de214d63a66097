//! Address-bar enhancement: luminosity grayscale, integer upscaling,
//! non-local-means denoising and unsharp sharpening.
//!
//! All kernels compute in a [`Scalar`] (`f32` or `f64`) and quantize to
//! 8 bits only on return. Out-of-range reads replicate the nearest edge.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{GrayImage, RgbImage};
use crate::scalar::Scalar;

pub const DEFAULT_RESCALE: usize = 3;
pub const DEFAULT_PATCH: usize = 7;
pub const DEFAULT_WINDOW: usize = 21;
pub const DEFAULT_STRENGTH: f64 = 10.0;
pub const SHARPEN_SIGMA: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum ImgprocError {
    #[error("image {width}x{height} is smaller than the {patch}x{patch} patch")]
    ImageTooSmall {
        width: usize,
        height: usize,
        patch: usize,
    },
    #[error("invalid denoise parameters: {0}")]
    BadParams(String),
    #[error("rescale factor must be at least 1")]
    BadFactor,
}

/// Luminosity grayscale, `Y = 0.299 R + 0.587 G + 0.114 B`, rounded half up.
///
/// Evaluated in integer per-mille arithmetic so the rounding is exact.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let pixels = img
        .pixels()
        .chunks_exact(3)
        .map(|c| luma(c[0], c[1], c[2]))
        .collect();
    GrayImage::from_raw(img.width(), img.height(), pixels).expect("same dimensions")
}

#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let milli = 299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b);
    ((milli + 500) / 1000) as u8
}

/// Bilinear upscale by an integer factor with pixel-center alignment.
pub fn rescale<S: Scalar>(img: &GrayImage, factor: usize) -> Result<GrayImage, ImgprocError> {
    if factor == 0 {
        return Err(ImgprocError::BadFactor);
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let f = S::from_count(factor);
    let half = S::lit(0.5);
    let taps = |n: usize, len: usize| -> Vec<(usize, usize, S)> {
        (0..n)
            .map(|o| {
                let src = ((S::from_count(o) + half) / f - half)
                    .max(S::zero())
                    .min(S::from_count(len - 1));
                let lo = src.floor().to_usize().unwrap_or(0);
                let hi = (lo + 1).min(len - 1);
                (lo, hi, src - S::from_count(lo))
            })
            .collect()
    };
    let xs = taps(w * factor, w);
    let ys = taps(h * factor, h);

    let one = S::one();
    let px = |x: usize, y: usize| S::from_intensity(img.get(x, y));
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let top = px(x0, y0) * (one - tx) + px(x1, y0) * tx;
            let bottom = px(x0, y1) * (one - tx) + px(x1, y1) * tx;
            out.push((top * (one - ty) + bottom * ty).to_intensity());
        }
    }
    Ok(GrayImage::from_raw(w * factor, h * factor, out).expect("dimensions computed above"))
}

/// How squared differences inside a patch are weighted before averaging.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchWeighting<S> {
    Uniform,
    Gaussian { sigma: S },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseParams<S> {
    pub patch_size: usize,
    pub search_window: usize,
    pub strength_h: S,
    pub patch_weighting: PatchWeighting<S>,
}

impl<S: Scalar> Default for DenoiseParams<S> {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH,
            search_window: DEFAULT_WINDOW,
            strength_h: S::lit(DEFAULT_STRENGTH),
            patch_weighting: PatchWeighting::Uniform,
        }
    }
}

impl<S: Scalar> DenoiseParams<S> {
    pub fn new(patch_size: usize, search_window: usize, strength_h: S) -> Self {
        Self {
            patch_size,
            search_window,
            strength_h,
            patch_weighting: PatchWeighting::Uniform,
        }
    }

    pub fn validate(&self) -> Result<(), ImgprocError> {
        let bad = |m: String| Err(ImgprocError::BadParams(m));
        if self.patch_size < 3 || self.patch_size.is_multiple_of(2) {
            return bad(format!(
                "patch size {} must be odd and >= 3",
                self.patch_size
            ));
        }
        if self.search_window.is_multiple_of(2) || self.search_window <= self.patch_size {
            return bad(format!(
                "search window {} must be odd and larger than the patch",
                self.search_window
            ));
        }
        if !(self.strength_h > S::zero() && self.strength_h.is_finite()) {
            return bad(format!(
                "filter strength {} must be positive",
                self.strength_h
            ));
        }
        if let PatchWeighting::Gaussian { sigma } = self.patch_weighting {
            if !(sigma > S::zero() && sigma.is_finite()) {
                return bad(format!("patch sigma {sigma} must be positive"));
            }
        }
        Ok(())
    }

    /// Normalized 1-D patch weights; the 2-D weight is their outer product.
    pub fn patch_weights_1d(&self) -> Vec<S> {
        let r = (self.patch_size / 2) as isize;
        let raw: Vec<S> = (-r..=r)
            .map(|d| match self.patch_weighting {
                PatchWeighting::Uniform => S::one(),
                PatchWeighting::Gaussian { sigma } => {
                    let d = S::lit(d as f64);
                    (-(d * d) / (S::lit(2.0) * sigma * sigma)).exp()
                }
            })
            .collect();
        let total: S = raw.iter().copied().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

fn check_size<S: Scalar>(img: &GrayImage, params: &DenoiseParams<S>) -> Result<(), ImgprocError> {
    params.validate()?;
    if img.width() < params.patch_size || img.height() < params.patch_size {
        return Err(ImgprocError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            patch: params.patch_size,
        });
    }
    Ok(())
}

/// A search-window position `(x, y)` and its weight.
pub type Neighbor<S> = ((usize, usize), S);

/// Normalized weights `ω(i, j)` for every candidate `j` in the search window of
/// pixel `(x, y)`, computed one patch at a time.
///
/// The search window is clipped to the image; patch reads replicate edges.
pub fn pixel_weights<S: Scalar>(
    img: &GrayImage,
    params: &DenoiseParams<S>,
    x: usize,
    y: usize,
) -> Result<Vec<Neighbor<S>>, ImgprocError> {
    check_size(img, params)?;
    let w1 = params.patch_weights_1d();
    let pr = (params.patch_size / 2) as isize;
    let sr = (params.search_window / 2) as isize;
    let h2 = params.strength_h * params.strength_h;
    let (xi, yi) = (x as isize, y as isize);

    let mut out = Vec::new();
    for jy in (yi - sr).max(0)..=(yi + sr).min(img.height() as isize - 1) {
        for jx in (xi - sr).max(0)..=(xi + sr).min(img.width() as isize - 1) {
            let mut dist = S::zero();
            for py in -pr..=pr {
                for px in -pr..=pr {
                    let a = S::from_intensity(img.get_clamped(xi + px, yi + py));
                    let b = S::from_intensity(img.get_clamped(jx + px, jy + py));
                    let wp = w1[(py + pr) as usize] * w1[(px + pr) as usize];
                    dist = dist + wp * (a - b) * (a - b);
                }
            }
            out.push(((jx as usize, jy as usize), (-dist / h2).exp()));
        }
    }
    let total: S = out.iter().map(|(_, w)| *w).sum();
    for (_, w) in &mut out {
        *w = *w / total;
    }
    Ok(out)
}

/// Non-local means: each pixel becomes the similarity-weighted mean of the
/// pixels in its search window, `ω ∝ exp(-‖patch_i − patch_j‖² / h²)`.
///
/// Runs offset by offset: for each displacement the squared-difference image
/// is filtered with the separable patch weights, giving every pixel's patch
/// distance for that displacement at once.
pub fn nlm_denoise<S: Scalar>(
    img: &GrayImage,
    params: &DenoiseParams<S>,
) -> Result<GrayImage, ImgprocError> {
    check_size(img, params)?;
    let (w, h) = (img.width(), img.height());
    let w1 = params.patch_weights_1d();
    let pr = params.patch_size / 2;
    let sr = params.search_window / 2;
    let inv_h2 = (params.strength_h * params.strength_h).recip();

    // Replicated padding wide enough for any patch read at any offset.
    let pad = pr + sr;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let mut padded = Vec::with_capacity(pw * ph);
    for py in 0..ph {
        for px in 0..pw {
            let v = img.get_clamped(px as isize - pad as isize, py as isize - pad as isize);
            padded.push(S::from_intensity(v));
        }
    }
    let source: Vec<S> = img.pixels().iter().map(|&v| S::from_intensity(v)).collect();

    let mut num = vec![S::zero(); w * h];
    let mut den = vec![S::zero(); w * h];
    // Squared differences over the patch-extended image, then row and column passes.
    let (ew, eh) = (w + 2 * pr, h + 2 * pr);
    let mut diff = vec![S::zero(); ew * eh];
    let mut rows = vec![S::zero(); w * eh];
    let taps = params.patch_size;
    let uniform = match params.patch_weighting {
        PatchWeighting::Uniform => Some(w1[0] * w1[0]),
        PatchWeighting::Gaussian { .. } => None,
    };
    let mut col = vec![S::zero(); w];

    for dy in -(sr as isize)..=sr as isize {
        for dx in -(sr as isize)..=sr as isize {
            for ey in 0..eh {
                let a_row = (ey + sr) * pw + sr;
                let b_row = ((ey + sr) as isize + dy) as usize * pw;
                for ex in 0..ew {
                    let a = padded[a_row + ex];
                    let b = padded[b_row + ((ex + sr) as isize + dx) as usize];
                    diff[ey * ew + ex] = (a - b) * (a - b);
                }
            }
            for ey in 0..eh {
                let line = &diff[ey * ew..(ey + 1) * ew];
                let out = &mut rows[ey * w..(ey + 1) * w];
                if uniform.is_some() {
                    // squared differences are integers, so running sums stay exact
                    let mut acc = line[..taps].iter().fold(S::zero(), |a, &v| a + v);
                    out[0] = acc;
                    for x in 1..w {
                        acc = acc + line[x + taps - 1] - line[x - 1];
                        out[x] = acc;
                    }
                } else {
                    for x in 0..w {
                        let mut acc = S::zero();
                        for t in 0..taps {
                            acc = acc + w1[t] * line[x + t];
                        }
                        out[x] = acc;
                    }
                }
            }
            let (ylo, yhi) = valid_range(h, dy);
            let (xlo, xhi) = valid_range(w, dx);
            if ylo == yhi || xlo == xhi {
                continue;
            }
            if let Some(unit) = uniform {
                // column sums for the valid rows only, scaled once by the patch weight
                for x in xlo..xhi {
                    let mut acc = S::zero();
                    for t in 0..taps {
                        acc = acc + rows[(ylo + t) * w + x];
                    }
                    col[x] = acc;
                }
                for y in ylo..yhi {
                    if y > ylo {
                        for x in xlo..xhi {
                            col[x] = col[x] + rows[(y + taps - 1) * w + x] - rows[(y - 1) * w + x];
                        }
                    }
                    let jy = (y as isize + dy) as usize;
                    for x in xlo..xhi {
                        let weight = (-col[x] * unit * inv_h2).exp();
                        let jx = (x as isize + dx) as usize;
                        num[y * w + x] = num[y * w + x] + weight * source[jy * w + jx];
                        den[y * w + x] = den[y * w + x] + weight;
                    }
                }
                continue;
            }
            for y in ylo..yhi {
                let jy = (y as isize + dy) as usize;
                for x in xlo..xhi {
                    let mut dist = S::zero();
                    for t in 0..taps {
                        dist = dist + w1[t] * rows[(y + t) * w + x];
                    }
                    let weight = (-dist * inv_h2).exp();
                    let jx = (x as isize + dx) as usize;
                    num[y * w + x] = num[y * w + x] + weight * source[jy * w + jx];
                    den[y * w + x] = den[y * w + x] + weight;
                }
            }
        }
    }

    let out = num
        .iter()
        .zip(&den)
        .map(|(&n, &d)| (n / d).to_intensity())
        .collect();
    Ok(GrayImage::from_raw(w, h, out).expect("same dimensions"))
}

/// Pixels `p` in `0..len` whose displaced partner `p + d` stays in `0..len`.
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d.max(0)).max(0) as usize;
    (lo.min(len), hi.max(lo.min(len)))
}

/// Normalized 1-D Gaussian of radius 2; its outer product is the 5×5 blur.
pub fn gaussian5_1d<S: Scalar>() -> [S; 5] {
    let sigma = S::lit(SHARPEN_SIGMA);
    let mut k = [S::zero(); 5];
    for (i, v) in k.iter_mut().enumerate() {
        let d = S::lit(i as f64 - 2.0);
        *v = (-(d * d) / (S::lit(2.0) * sigma * sigma)).exp();
    }
    let total: S = k.iter().copied().sum();
    k.map(|v| v / total)
}

/// The 5×5 unsharp kernel `2δ − G`, where `G` is the normalized Gaussian.
pub fn sharpen_kernel<S: Scalar>() -> [[S; 5]; 5] {
    let g = gaussian5_1d::<S>();
    let mut k = [[S::zero(); 5]; 5];
    for (r, row) in k.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = -(g[r] * g[c]);
        }
    }
    k[2][2] = k[2][2] + S::lit(2.0);
    k
}

/// Unsharp masking with the 5×5 Gaussian: `2·v − G∗v`, clamped to [0, 255].
pub fn sharpen<S: Scalar>(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let g = gaussian5_1d::<S>();
    let mut horiz = vec![S::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = S::zero();
            for (t, &gw) in g.iter().enumerate() {
                let v = img.get_clamped(x as isize + t as isize - 2, y as isize);
                acc = acc + gw * S::from_intensity(v);
            }
            horiz[y * w + x] = acc;
        }
    }
    let two = S::lit(2.0);
    let out = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let mut blur = S::zero();
            for (t, &gw) in g.iter().enumerate() {
                let yy = (y as isize + t as isize - 2).clamp(0, h as isize - 1) as usize;
                blur = blur + gw * horiz[yy * w + x];
            }
            (two * S::from_intensity(img.get(x, y)) - blur).to_intensity()
        })
        .collect();
    GrayImage::from_raw(w, h, out).expect("same dimensions")
}

/// Parameters for the field enhancement chain that follows grayscale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhanceParams {
    pub rescale_factor: usize,
    pub denoise: DenoiseParams<f64>,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        Self {
            rescale_factor: DEFAULT_RESCALE,
            denoise: DenoiseParams::default(),
        }
    }
}

/// Intermediate images produced by [`enhance`], kept for debugging dumps.
#[derive(Clone, Debug)]
pub struct EnhanceStages {
    pub rescaled: GrayImage,
    pub denoised: GrayImage,
    pub sharpened: GrayImage,
}

/// Rescale → denoise → sharpen, on an already-grayscale field.
pub fn enhance(field: &GrayImage, params: &EnhanceParams) -> Result<EnhanceStages, ImgprocError> {
    let rescaled = rescale::<f64>(field, params.rescale_factor)?;
    let denoised = nlm_denoise(&rescaled, &params.denoise)?;
    let sharpened = sharpen::<f64>(&denoised);
    Ok(EnhanceStages {
        rescaled,
        denoised,
        sharpened,
    })
}
