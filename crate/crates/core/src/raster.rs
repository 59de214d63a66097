//! Owned 8-bit raster types and PNG I/O.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("pixel buffer has {actual} bytes, expected {expected} for {width}x{height}")]
    BufferSize {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    Empty { width: usize, height: usize },
    #[error("failed to decode {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to encode {path}: {source}")]
    Encode {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

fn check_dims(width: usize, height: usize, channels: usize, len: usize) -> Result<(), RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::Empty { width, height });
    }
    let expected = width * height * channels;
    if len != expected {
        return Err(RasterError::BufferSize {
            width,
            height,
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// Row-major interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, RasterError> {
        check_dims(width, height, 3, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Keeps the first `rows` rows.
    pub fn top_rows(&self, rows: usize) -> Self {
        let rows = rows.clamp(1, self.height);
        Self {
            width: self.width,
            height: rows,
            pixels: self.pixels[..rows * self.width * 3].to_vec(),
        }
    }

    /// Decodes any supported raster, compositing alpha over white.
    pub fn open(path: &Path) -> Result<Self, RasterError> {
        let decoded = image::open(path).map_err(|source| RasterError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        let rgba = decoded.to_rgba8();
        let (w, h) = rgba.dimensions();
        let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
        for px in rgba.pixels() {
            let [r, g, b, a] = px.0;
            for c in [r, g, b] {
                pixels.push(over_white(c, a));
            }
        }
        Self::from_raw(w as usize, h as usize, pixels)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let buf: ImageBuffer<Rgb<u8>, &[u8]> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, &self.pixels[..])
                .expect("buffer size checked at construction");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| RasterError::Encode {
                path: path.display().to_string(),
                source,
            })
    }
}

fn over_white(c: u8, a: u8) -> u8 {
    let (c, a) = (u32::from(c), u32::from(a));
    ((c * a + 255 * (255 - a) + 127) / 255) as u8
}

/// Row-major single-channel image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, RasterError> {
        check_dims(width, height, 1, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Edge-replicated read: out-of-range coordinates clamp to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[y * self.width + x]
    }

    pub fn put(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Copies the rectangle `[x, x+w) × [y, y+h)`; the caller keeps it in bounds.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Self {
        assert!(w > 0 && h > 0 && x + w <= self.width && y + h <= self.height);
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            pixels.extend_from_slice(&self.pixels[start..start + w]);
        }
        Self {
            width: w,
            height: h,
            pixels,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.pixels.iter().all(|&p| p == self.pixels[0])
    }

    pub fn open(path: &Path) -> Result<Self, RasterError> {
        Ok(crate::imgproc::to_grayscale(&RgbImage::open(path)?))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let buf: ImageBuffer<Luma<u8>, &[u8]> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, &self.pixels[..])
                .expect("buffer size checked at construction");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| RasterError::Encode {
                path: path.display().to_string(),
                source,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_buffers() {
        assert!(matches!(
            GrayImage::from_raw(3, 2, vec![0; 5]),
            Err(RasterError::BufferSize { expected: 6, .. })
        ));
        assert!(matches!(
            RgbImage::from_raw(0, 2, vec![]),
            Err(RasterError::Empty { .. })
        ));
    }

    #[test]
    fn clamped_reads_replicate_edges() {
        let img = GrayImage::from_fn(3, 2, |x, y| (10 * y + x) as u8);
        assert_eq!(img.get_clamped(-4, -1), 0);
        assert_eq!(img.get_clamped(7, 0), 2);
        assert_eq!(img.get_clamped(1, 9), 11);
    }

    #[test]
    fn alpha_composites_over_white() {
        assert_eq!(over_white(0, 0), 255);
        assert_eq!(over_white(0, 255), 0);
        assert_eq!(over_white(100, 255), 100);
        assert_eq!(over_white(0, 128), 127);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = GrayImage::from_fn(5, 4, |x, y| (x * 40 + y) as u8);
        img.save_png(&path).unwrap();
        assert_eq!(GrayImage::open(&path).unwrap(), img);
    }
}
