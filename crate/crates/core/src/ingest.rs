//! Frame enumeration and top-of-screen cropping.
//!
//! A session is a directory of lossless frames (one file per sampled
//! instant). Video containers are decoded outside this crate, e.g.
//! `ffmpeg -i session.mp4 -vf fps=1 frames/f_%05d.png`.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::raster::{RasterError, RgbImage};

pub const DEFAULT_CROP_FRACTION: f64 = 1.0 / 3.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no frames matching `{pattern}` in {dir}")]
    EmptySession { dir: PathBuf, pattern: String },
    #[error("{path} is not a readable image: {reason}")]
    NonImageFile { path: PathBuf, reason: String },
    #[error("cannot read frame directory {dir}: {source}")]
    Io {
        dir: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid filename pattern `{pattern}`: {reason}")]
    BadPattern { pattern: String, reason: String },
    #[error("fps must be positive and finite, got {0}")]
    BadFps(f64),
    #[error("crop fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error(transparent)]
    Decode(#[from] RasterError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRef {
    pub path: PathBuf,
    pub index: usize,
    pub timestamp_s: f64,
}

/// Lists frames matching `pattern` (a filename glob) in natural filename order
/// and stamps each with `index / fps`.
pub fn list_frames(dir: &Path, pattern: &str, fps: f64) -> Result<Vec<FrameRef>, IngestError> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(IngestError::BadFps(fps));
    }
    let matcher = glob::Pattern::new(pattern).map_err(|e| IngestError::BadPattern {
        pattern: pattern.to_owned(),
        reason: e.to_string(),
    })?;
    let io_err = |source| IngestError::Io {
        dir: dir.to_path_buf(),
        source,
    };

    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        if !entry.file_type().map_err(io_err)?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if matcher.matches(&name) {
            names.push(name);
        }
    }
    if names.is_empty() {
        return Err(IngestError::EmptySession {
            dir: dir.to_path_buf(),
            pattern: pattern.to_owned(),
        });
    }
    names.sort_by(|a, b| natural_cmp(a, b));

    names
        .into_iter()
        .enumerate()
        .map(|(index, name)| {
            let path = dir.join(name);
            probe_image(&path)?;
            Ok(FrameRef {
                path,
                index,
                timestamp_s: index as f64 / fps,
            })
        })
        .collect()
}

fn probe_image(path: &Path) -> Result<(), IngestError> {
    let non_image = |reason: String| IngestError::NonImageFile {
        path: path.to_path_buf(),
        reason,
    };
    image::ImageReader::open(path)
        .map_err(|e| non_image(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| non_image(e.to_string()))?
        .into_dimensions()
        .map_err(|e| non_image(e.to_string()))?;
    Ok(())
}

/// Number of rows kept when cropping `height` rows to `fraction`.
pub fn crop_rows(height: usize, fraction: f64) -> usize {
    // The epsilon keeps exact ratios such as 900 * (1/3) from flooring to 299.
    let rows = (height as f64 * fraction + 1e-9).floor() as usize;
    rows.clamp(1, height)
}

/// Decodes a frame and keeps the top `fraction` of its rows.
pub fn load_and_crop_top(frame: &FrameRef, fraction: f64) -> Result<RgbImage, IngestError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(IngestError::BadFraction(fraction));
    }
    let img = RgbImage::open(&frame.path)?;
    crop_top(&img, fraction)
}

pub fn crop_top(img: &RgbImage, fraction: f64) -> Result<RgbImage, IngestError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(IngestError::BadFraction(fraction));
    }
    Ok(img.top_rows(crop_rows(img.height(), fraction)))
}

/// Compares strings treating embedded digit runs as numbers (`f_2 < f_10`).
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut ai, mut bi) = (a.as_bytes(), b.as_bytes());
    loop {
        match (ai.first(), bi.first()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let da = ai.iter().take_while(|c| c.is_ascii_digit()).count();
                let db = bi.iter().take_while(|c| c.is_ascii_digit()).count();
                let (na, nb) = (trim_zeros(&ai[..da]), trim_zeros(&bi[..db]));
                let ord = na.len().cmp(&nb.len()).then_with(|| na.cmp(nb));
                if ord != Ordering::Equal {
                    return ord;
                }
                ai = &ai[da..];
                bi = &bi[db..];
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                ai = &ai[1..];
                bi = &bi[1..];
            }
        }
    }
}

fn trim_zeros(digits: &[u8]) -> &[u8] {
    let nz = digits
        .iter()
        .position(|&d| d != b'0')
        .unwrap_or(digits.len());
    &digits[nz..]
}
