//! Browser anchor localization by zero-normalized cross-correlation and
//! address-bar cropping.
//!
//! For a template `T` (w × h) and image `I`, the response at `(x, y)` is
//!
//! ```text
//! R(x, y) = Σ T'(x', y') · I'(x + x', y + y') / sqrt(Σ T'² · Σ I'²)
//! ```
//!
//! with `T' = T − mean(T)` and `I'` the window minus its own mean. Windows
//! with zero variance score 0.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{GrayImage, RasterError};
use crate::scalar::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Above this many multiply-adds the correlation runs through the FFT.
const DIRECT_WORK_LIMIT: usize = 1 << 22;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("template {tw}x{th} does not fit in image {iw}x{ih}")]
    TemplateLargerThanImage {
        tw: usize,
        th: usize,
        iw: usize,
        ih: usize,
    },
    #[error("url field for `{browser_id}` lies entirely outside the {width}x{height} image")]
    DegenerateField {
        browser_id: String,
        width: usize,
        height: usize,
    },
    #[error("browser `{0}` is not in the manifest")]
    UnknownBrowser(String),
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest lists no templates")]
    Empty,
    #[error("duplicate browser id `{0}`")]
    DuplicateId(String),
    #[error("threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("template for `{0}` is constant; it cannot be correlated")]
    ConstantTemplate(String),
    #[error("bad url field geometry for `{browser_id}`: {reason}")]
    BadGeometry { browser_id: String, reason: String },
    #[error(transparent)]
    Template(#[from] RasterError),
}

/// Dense response surface over all placements of the template.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseSurface<S> {
    width: usize,
    height: usize,
    values: Vec<S>,
}

/// Best placement on a surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak<S> {
    pub score: S,
    pub x: usize,
    pub y: usize,
}

impl<S: Scalar> ResponseSurface<S> {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> S {
        self.values[y * self.width + x]
    }

    /// Global maximum; ties go to the smallest `y`, then the smallest `x`.
    pub fn peak(&self) -> Peak<S> {
        let mut best = Peak {
            score: self.values[0],
            x: 0,
            y: 0,
        };
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.score {
                best = Peak {
                    score: v,
                    x: i % self.width,
                    y: i / self.width,
                };
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorrelationMethod {
    /// Direct summation for small problems, FFT otherwise.
    #[default]
    Auto,
    Direct,
    Fft,
}

pub fn match_template<S: Scalar>(
    image: &GrayImage,
    template: &GrayImage,
) -> Result<ResponseSurface<S>, MatchError> {
    match_template_with(image, template, CorrelationMethod::Auto)
}

pub fn match_template_with<S: Scalar>(
    image: &GrayImage,
    template: &GrayImage,
    method: CorrelationMethod,
) -> Result<ResponseSurface<S>, MatchError> {
    let (iw, ih) = (image.width(), image.height());
    let (tw, th) = (template.width(), template.height());
    if tw > iw || th > ih {
        return Err(MatchError::TemplateLargerThanImage { tw, th, iw, ih });
    }
    let (rw, rh) = (iw - tw + 1, ih - th + 1);
    let n = tw * th;

    let t_sum: u64 = template.pixels().iter().map(|&v| u64::from(v)).sum();
    let t_mean = S::from_u64(t_sum).expect("sum fits") / S::from_count(n);
    let t_zero: Vec<S> = template
        .pixels()
        .iter()
        .map(|&v| S::from_intensity(v) - t_mean)
        .collect();
    let t_energy: S = t_zero.iter().map(|&v| v * v).sum();
    if template.is_constant() {
        return Ok(ResponseSurface {
            width: rw,
            height: rh,
            values: vec![S::zero(); rw * rh],
        });
    }

    let numerators = match method {
        CorrelationMethod::Direct => correlate_direct(image, &t_zero, tw, th),
        CorrelationMethod::Fft => correlate_fft(image, &t_zero, tw, th),
        CorrelationMethod::Auto if rw * rh * n <= DIRECT_WORK_LIMIT => {
            correlate_direct(image, &t_zero, tw, th)
        }
        CorrelationMethod::Auto => correlate_fft(image, &t_zero, tw, th),
    };

    let sums = WindowSums::new(image);
    let n_s = S::from_count(n);
    let mut values = Vec::with_capacity(rw * rh);
    for y in 0..rh {
        for x in 0..rw {
            let (s1, s2) = sums.window(x, y, tw, th);
            // n·Σ I² − (Σ I)², exact in integers
            let spread = n as i128 * i128::from(s2) - i128::from(s1) * i128::from(s1);
            if spread <= 0 {
                values.push(S::zero());
                continue;
            }
            let i_energy = S::from_i128(spread).expect("spread fits") / n_s;
            let r = numerators[y * rw + x] / (t_energy * i_energy).sqrt();
            values.push(r.max(-S::one()).min(S::one()));
        }
    }
    Ok(ResponseSurface {
        width: rw,
        height: rh,
        values,
    })
}

/// Σ T'(x', y') · I(x + x', y + y'), which equals Σ T' · I' since Σ T' = 0.
fn correlate_direct<S: Scalar>(image: &GrayImage, t_zero: &[S], tw: usize, th: usize) -> Vec<S> {
    let (iw, ih) = (image.width(), image.height());
    let (rw, rh) = (iw - tw + 1, ih - th + 1);
    let src: Vec<S> = image
        .pixels()
        .iter()
        .map(|&v| S::from_intensity(v))
        .collect();
    let mut out = vec![S::zero(); rw * rh];
    for y in 0..rh {
        for ty in 0..th {
            let t_row = &t_zero[ty * tw..(ty + 1) * tw];
            let i_row = &src[(y + ty) * iw..(y + ty + 1) * iw];
            let o_row = &mut out[y * rw..(y + 1) * rw];
            for (x, o) in o_row.iter_mut().enumerate() {
                let window = &i_row[x..x + tw];
                let mut acc = S::zero();
                for (&t, &i) in t_row.iter().zip(window) {
                    acc = acc + t * i;
                }
                *o = *o + acc;
            }
        }
    }
    out
}

/// Same correlation through a circular FFT the size of the image; valid
/// placements never wrap, so no padding is needed.
fn correlate_fft<S: Scalar>(image: &GrayImage, t_zero: &[S], tw: usize, th: usize) -> Vec<S> {
    let (iw, ih) = (image.width(), image.height());
    let (rw, rh) = (iw - tw + 1, ih - th + 1);
    let mut planner = FftPlanner::<S>::new();

    let mut img_freq: Vec<Complex<S>> = image
        .pixels()
        .iter()
        .map(|&v| Complex::new(S::from_intensity(v), S::zero()))
        .collect();
    let mut tpl_freq = vec![Complex::new(S::zero(), S::zero()); iw * ih];
    for ty in 0..th {
        for tx in 0..tw {
            tpl_freq[ty * iw + tx].re = t_zero[ty * tw + tx];
        }
    }
    fft2(&mut planner, &mut img_freq, iw, ih, false);
    fft2(&mut planner, &mut tpl_freq, iw, ih, false);
    for (a, b) in img_freq.iter_mut().zip(&tpl_freq) {
        *a = *a * b.conj();
    }
    fft2(&mut planner, &mut img_freq, iw, ih, true);

    let scale = S::from_count(iw * ih).recip();
    let mut out = Vec::with_capacity(rw * rh);
    for y in 0..rh {
        for x in 0..rw {
            out.push(img_freq[y * iw + x].re * scale);
        }
    }
    out
}

fn fft2<S: Scalar>(
    planner: &mut FftPlanner<S>,
    data: &mut [Complex<S>],
    w: usize,
    h: usize,
    inverse: bool,
) {
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row_fft.process(data);
    let mut column = vec![Complex::new(S::zero(), S::zero()); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
}

/// Integral images of `I` and `I²` in exact integer arithmetic.
struct WindowSums {
    stride: usize,
    sum: Vec<u64>,
    sq: Vec<u64>,
}

impl WindowSums {
    fn new(image: &GrayImage) -> Self {
        let (w, h) = (image.width(), image.height());
        let stride = w + 1;
        let mut sum = vec![0u64; stride * (h + 1)];
        let mut sq = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let (mut row_s, mut row_q) = (0u64, 0u64);
            for x in 0..w {
                let v = u64::from(image.get(x, y));
                row_s += v;
                row_q += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row_s;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_q;
            }
        }
        Self { stride, sum, sq }
    }

    fn window(&self, x: usize, y: usize, w: usize, h: usize) -> (u64, u64) {
        let s = self.stride;
        let at = |t: &[u64], xx: usize, yy: usize| t[yy * s + xx];
        let rect =
            |t: &[u64]| at(t, x + w, y + h) + at(t, x, y) - at(t, x + w, y) - at(t, x, y + h);
        (rect(&self.sum), rect(&self.sq))
    }
}

/// Width of the address-bar rectangle relative to the anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldWidth {
    Pixels(usize),
    ToRightEdge,
}

impl Serialize for FieldWidth {
    fn serialize<Se: serde::Serializer>(&self, s: Se) -> Result<Se::Ok, Se::Error> {
        match self {
            FieldWidth::Pixels(n) => s.serialize_u64(*n as u64),
            FieldWidth::ToRightEdge => s.serialize_str("to-right-edge"),
        }
    }
}

impl<'de> Deserialize<'de> for FieldWidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Pixels(usize),
            Keyword(String),
        }
        match Repr::deserialize(d)? {
            Repr::Pixels(n) => Ok(FieldWidth::Pixels(n)),
            Repr::Keyword(k) if k == "to-right-edge" => Ok(FieldWidth::ToRightEdge),
            Repr::Keyword(k) => Err(serde::de::Error::custom(format!(
                "field width must be a pixel count or \"to-right-edge\", got {k:?}"
            ))),
        }
    }
}

/// Address-bar rectangle relative to the top-left corner of the matched anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldOffset {
    pub dx: i64,
    pub dy: i64,
    pub width: FieldWidth,
    pub height: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrowserTemplate {
    pub browser_id: String,
    pub template: GrayImage,
    pub url_field_offset: FieldOffset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateManifest {
    pub templates: Vec<BrowserTemplate>,
    pub threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    #[serde(default = "default_threshold")]
    threshold: f64,
    templates: Vec<TemplateEntry>,
}

#[derive(Serialize, Deserialize)]
struct TemplateEntry {
    browser_id: String,
    template_path: PathBuf,
    url_field_offset: FieldOffset,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl TemplateManifest {
    pub fn new(templates: Vec<BrowserTemplate>, threshold: f64) -> Result<Self, ManifestError> {
        let manifest = Self {
            templates,
            threshold,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.templates.is_empty() {
            return Err(ManifestError::Empty);
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(ManifestError::BadThreshold(self.threshold));
        }
        let mut seen = HashSet::new();
        for t in &self.templates {
            if !seen.insert(t.browser_id.as_str()) {
                return Err(ManifestError::DuplicateId(t.browser_id.clone()));
            }
            if t.template.is_constant() {
                return Err(ManifestError::ConstantTemplate(t.browser_id.clone()));
            }
            let off = t.url_field_offset;
            if off.height == 0 || off.width == FieldWidth::Pixels(0) {
                return Err(ManifestError::BadGeometry {
                    browser_id: t.browser_id.clone(),
                    reason: "field must be at least 1x1".into(),
                });
            }
        }
        Ok(())
    }

    /// Loads the JSON manifest; template paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: ManifestFile =
            serde_json::from_str(&text).map_err(|source| ManifestError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let templates = file
            .templates
            .into_iter()
            .map(|e| {
                Ok(BrowserTemplate {
                    template: GrayImage::open(&base.join(&e.template_path))?,
                    browser_id: e.browser_id,
                    url_field_offset: e.url_field_offset,
                })
            })
            .collect::<Result<Vec<_>, ManifestError>>()?;
        Self::new(templates, file.threshold)
    }

    /// Writes `manifest.json` plus one `<browser_id>.png` per template into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, ManifestError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ManifestError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut entries = Vec::new();
        for t in &self.templates {
            let name = PathBuf::from(format!("{}.png", t.browser_id));
            t.template.save_png(&dir.join(&name))?;
            entries.push(TemplateEntry {
                browser_id: t.browser_id.clone(),
                template_path: name,
                url_field_offset: t.url_field_offset,
            });
        }
        let file = ManifestFile {
            threshold: self.threshold,
            templates: entries,
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&file).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(io(&path))?;
        Ok(path)
    }

    pub fn get(&self, browser_id: &str) -> Option<&BrowserTemplate> {
        self.templates.iter().find(|t| t.browser_id == browser_id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult<S> {
    pub browser_id: String,
    pub score: S,
    pub x: usize,
    pub y: usize,
}

/// Scores every template and keeps the best one that clears the threshold.
/// Templates larger than the image cannot match and are skipped.
pub fn best_browser_match<S: Scalar>(
    image: &GrayImage,
    manifest: &TemplateManifest,
) -> Option<MatchResult<S>> {
    let threshold = S::lit(manifest.threshold);
    let mut best: Option<MatchResult<S>> = None;
    for t in &manifest.templates {
        let Ok(surface) = match_template::<S>(image, &t.template) else {
            continue;
        };
        let peak = surface.peak();
        if peak.score < threshold {
            continue;
        }
        if best.as_ref().is_none_or(|b| peak.score > b.score) {
            best = Some(MatchResult {
                browser_id: t.browser_id.clone(),
                score: peak.score,
                x: peak.x,
                y: peak.y,
            });
        }
    }
    best
}

/// The address-bar rectangle for a match, clipped to the image.
pub fn field_rect<S>(
    image_width: usize,
    image_height: usize,
    matched: &MatchResult<S>,
    manifest: &TemplateManifest,
) -> Result<Rect, MatchError> {
    let t = manifest
        .get(&matched.browser_id)
        .ok_or_else(|| MatchError::UnknownBrowser(matched.browser_id.clone()))?;
    let off = t.url_field_offset;
    let x0 = matched.x as i64 + off.dx;
    let y0 = matched.y as i64 + off.dy;
    let x1 = match off.width {
        FieldWidth::Pixels(w) => x0 + w as i64,
        FieldWidth::ToRightEdge => image_width as i64,
    };
    let y1 = y0 + off.height as i64;

    let cx0 = x0.max(0);
    let cy0 = y0.max(0);
    let cx1 = x1.min(image_width as i64);
    let cy1 = y1.min(image_height as i64);
    if cx1 <= cx0 || cy1 <= cy0 {
        return Err(MatchError::DegenerateField {
            browser_id: matched.browser_id.clone(),
            width: image_width,
            height: image_height,
        });
    }
    Ok(Rect {
        x: cx0 as usize,
        y: cy0 as usize,
        width: (cx1 - cx0) as usize,
        height: (cy1 - cy0) as usize,
    })
}

pub fn crop_url_field<S>(
    image: &GrayImage,
    matched: &MatchResult<S>,
    manifest: &TemplateManifest,
) -> Result<GrayImage, MatchError> {
    let r = field_rect(image.width(), image.height(), matched, manifest)?;
    Ok(image.crop(r.x, r.y, r.width, r.height))
}
