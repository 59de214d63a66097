//! Character recognition boundary.
//!
//! The production engine is an external executable (Tesseract-compatible
//! argument shape) run as a child process. The stub engine is a fixed-pitch
//! nearest-glyph classifier for text drawn in the built-in bitmap font.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::font::{self, Glyph, GLYPH_HEIGHT, PITCH};
use crate::raster::GrayImage;

pub const MIN_FIELD_SIDE: usize = 8;
pub const DEFAULT_TIMEOUT_S: f64 = 30.0;
pub const STUB_BINARIZE: u8 = 128;
/// A cell farther than this fraction of its area from every glyph reads as `?`.
pub const STUB_REJECT_FRACTION: f64 = 0.4;

/// Default argument template: image path, output base, single-line segmentation.
pub const DEFAULT_CMD_TEMPLATE: &str = "{exe} {image} {outbase} --psm 7";

#[derive(Clone, Debug, Error, PartialEq)]
pub enum OcrError {
    #[error("OCR executable not found: {0}")]
    EngineMissing(PathBuf),
    #[error("OCR engine timed out after {0} s")]
    EngineTimeout(f64),
    #[error("OCR engine failed: {0}")]
    EngineFailure(String),
    #[error("field {width}x{height} is below the 8x8 minimum")]
    FieldTooSmall { width: usize, height: usize },
    #[error("OCR scratch I/O failed: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    External,
    #[default]
    Stub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub kind: EngineKind,
    pub executable: Option<PathBuf>,
    /// Appended after the command template's own arguments.
    pub extra_args: Vec<String>,
    /// Whitespace-separated argv with `{exe}`, `{image}` and `{outbase}`
    /// placeholders. Without `{outbase}` the text is read from stdout.
    pub cmd_template: String,
    pub timeout_s: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            kind: EngineKind::Stub,
            executable: None,
            extra_args: Vec::new(),
            cmd_template: DEFAULT_CMD_TEMPLATE.to_string(),
            timeout_s: DEFAULT_TIMEOUT_S,
        }
    }
}

impl EngineConfig {
    pub fn stub() -> Self {
        Self::default()
    }

    pub fn external(executable: impl Into<PathBuf>) -> Self {
        Self {
            kind: EngineKind::External,
            executable: Some(executable.into()),
            ..Self::default()
        }
    }

    pub fn engine_id(&self) -> String {
        match self.kind {
            EngineKind::Stub => "stub".to_string(),
            EngineKind::External => match &self.executable {
                Some(p) => format!(
                    "external:{}",
                    p.file_name().map_or_else(
                        || p.display().to_string(),
                        |n| n.to_string_lossy().into_owned()
                    )
                ),
                None => "external".to_string(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcrResult {
    pub text: String,
    pub engine_id: String,
    pub ok: bool,
    pub failure: Option<OcrError>,
}

/// Runs the configured engine; every failure is folded into the result.
pub fn recognize(field: &GrayImage, cfg: &EngineConfig) -> OcrResult {
    let engine_id = cfg.engine_id();
    match try_recognize(field, cfg) {
        Ok(text) => OcrResult {
            text,
            engine_id,
            ok: true,
            failure: None,
        },
        Err(e) => OcrResult {
            text: String::new(),
            engine_id,
            ok: false,
            failure: Some(e),
        },
    }
}

pub fn try_recognize(field: &GrayImage, cfg: &EngineConfig) -> Result<String, OcrError> {
    if field.width() < MIN_FIELD_SIDE || field.height() < MIN_FIELD_SIDE {
        return Err(OcrError::FieldTooSmall {
            width: field.width(),
            height: field.height(),
        });
    }
    let text = match cfg.kind {
        EngineKind::Stub => stub_recognize(field),
        EngineKind::External => run_external(field, cfg)?,
    };
    Ok(single_line(&text))
}

fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn run_external(field: &GrayImage, cfg: &EngineConfig) -> Result<String, OcrError> {
    let exe = cfg
        .executable
        .clone()
        .ok_or_else(|| OcrError::EngineMissing(PathBuf::new()))?;
    let scratch = tempfile::Builder::new()
        .prefix("urltrace-ocr")
        .tempdir()
        .map_err(|e| OcrError::Io(e.to_string()))?;
    let image_path = scratch.path().join("field.png");
    let outbase = scratch.path().join("out");
    field
        .save_png(&image_path)
        .map_err(|e| OcrError::Io(e.to_string()))?;

    let argv = build_argv(cfg, &exe, &image_path, &outbase);
    let reads_file = cfg.cmd_template.contains("{outbase}");
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| OcrError::EngineFailure("empty command template".into()))?;

    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => {
                OcrError::EngineMissing(PathBuf::from(program))
            }
            _ => OcrError::EngineFailure(e.to_string()),
        })?;

    // Drain pipes on helper threads so a chatty engine cannot block on a full pipe.
    let drain = |pipe: Option<Box<dyn Read + Send>>| {
        std::thread::spawn(move || {
            let mut buf = Vec::new();
            if let Some(mut p) = pipe {
                let _ = p.read_to_end(&mut buf);
            }
            buf
        })
    };
    let stdout = drain(
        child
            .stdout
            .take()
            .map(|p| Box::new(p) as Box<dyn Read + Send>),
    );
    let stderr = drain(
        child
            .stderr
            .take()
            .map(|p| Box::new(p) as Box<dyn Read + Send>),
    );

    let timeout = Duration::from_secs_f64(cfg.timeout_s.max(0.0));
    let status = match child
        .wait_timeout(timeout)
        .map_err(|e| OcrError::EngineFailure(e.to_string()))?
    {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(OcrError::EngineTimeout(cfg.timeout_s));
        }
    };
    let stdout = stdout.join().unwrap_or_default();
    let stderr = stderr.join().unwrap_or_default();
    if !status.success() {
        let msg = String::from_utf8_lossy(&stderr);
        return Err(OcrError::EngineFailure(format!(
            "{status}: {}",
            msg.trim().chars().take(200).collect::<String>()
        )));
    }
    if reads_file {
        let txt = outbase.with_extension("txt");
        fs::read_to_string(&txt)
            .map_err(|e| OcrError::EngineFailure(format!("no output at {}: {e}", txt.display())))
    } else {
        Ok(String::from_utf8_lossy(&stdout).into_owned())
    }
}

fn build_argv(cfg: &EngineConfig, exe: &Path, image: &Path, outbase: &Path) -> Vec<String> {
    let mut argv: Vec<String> = cfg
        .cmd_template
        .split_whitespace()
        .map(|tok| {
            tok.replace("{exe}", &exe.to_string_lossy())
                .replace("{image}", &image.to_string_lossy())
                .replace("{outbase}", &outbase.to_string_lossy())
        })
        .collect();
    argv.extend(cfg.extra_args.iter().cloned());
    argv
}

/// Counting semaphore bounding concurrent engine invocations.
#[derive(Debug)]
pub struct ConcurrencyCap {
    free: Mutex<usize>,
    cv: Condvar,
}

impl ConcurrencyCap {
    pub fn new(limit: usize) -> Self {
        Self {
            free: Mutex::new(limit.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().expect("cap lock");
            while *free == 0 {
                free = self.cv.wait(free).expect("cap lock");
            }
            *free -= 1;
        }
        struct Release<'a>(&'a ConcurrencyCap);
        impl Drop for Release<'_> {
            fn drop(&mut self) {
                *self.0.free.lock().expect("cap lock") += 1;
                self.0.cv.notify_one();
            }
        }
        let _release = Release(self);
        f()
    }
}

/// An engine configuration plus its process-spawn cap.
#[derive(Debug)]
pub struct Recognizer {
    cfg: EngineConfig,
    cap: ConcurrencyCap,
}

impl Recognizer {
    pub fn new(cfg: EngineConfig, max_concurrent: usize) -> Self {
        Self {
            cfg,
            cap: ConcurrencyCap::new(max_concurrent),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn recognize(&self, field: &GrayImage) -> OcrResult {
        match self.cfg.kind {
            EngineKind::Stub => recognize(field, &self.cfg),
            EngineKind::External => self.cap.run(|| recognize(field, &self.cfg)),
        }
    }
}

struct InkMap {
    width: usize,
    height: usize,
    ink: Vec<bool>,
}

impl InkMap {
    fn new(field: &GrayImage) -> Self {
        Self {
            width: field.width(),
            height: field.height(),
            ink: field.pixels().iter().map(|&v| v < STUB_BINARIZE).collect(),
        }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.ink[y as usize * self.width + x as usize]
    }

    fn row_counts(&self) -> Vec<usize> {
        self.ink
            .chunks_exact(self.width)
            .map(|r| r.iter().filter(|&&b| b).count())
            .collect()
    }
}

/// A cell's glyph (`None` for blank) and its Hamming distance.
type Cell = (Option<char>, usize);

/// Reads one line of dark text drawn in the built-in font at any integer scale.
///
/// Binarizes at 128, locates the text band from the row ink profile, then
/// tiles fixed-pitch cells at the phase that best explains the ink and labels
/// each cell with its nearest glyph by Hamming distance. Cells nearest to
/// blank are skipped; cells farther than 40% of their area from everything
/// read as `?`.
pub fn stub_recognize(field: &GrayImage) -> String {
    let map = InkMap::new(field);
    let rows = map.row_counts();
    let peak = rows.iter().copied().max().unwrap_or(0);
    if peak == 0 {
        return String::new();
    }
    let strong: Vec<usize> = (0..rows.len()).filter(|&y| rows[y] * 4 >= peak).collect();
    let (first, last) = (strong[0], *strong.last().expect("peak row is strong"));
    let scale = (((last - first + 1) as f64 / GLYPH_HEIGHT as f64).round() as usize).max(1);
    let band = GLYPH_HEIGHT * scale;

    // Slide the band near the detected extent to the position holding the most ink.
    let lo = first.saturating_sub(scale);
    let hi = (first + scale).min(rows.len().saturating_sub(1));
    let band_ink = |top: usize| -> usize { rows[top..(top + band).min(rows.len())].iter().sum() };
    let top = (lo..=hi).fold(first, |best, y| {
        if band_ink(y) > band_ink(best) {
            y
        } else {
            best
        }
    });

    let pitch = PITCH * scale;
    let area = pitch * band;
    let reject = STUB_REJECT_FRACTION * area as f64;

    // (total cost, per-cell label and distance) of the best phase so far
    let mut best: Option<(usize, Vec<Cell>)> = None;
    for phase in 0..pitch {
        let mut cells = Vec::new();
        let mut cost = 0;
        let mut left = phase as isize - pitch as isize;
        while left < map.width as isize {
            let (label, dist) = classify_cell(&map, left, top as isize, scale);
            cost += dist;
            cells.push((label, dist));
            left += pitch as isize;
        }
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, cells));
        }
    }

    let (_, cells) = best.expect("at least one phase");
    cells
        .into_iter()
        .filter_map(|(label, dist)| {
            if dist as f64 > reject {
                Some('?')
            } else {
                label
            }
        })
        .collect()
}

/// Nearest label for the cell at `(left, top)`: a glyph, or `None` for blank.
fn classify_cell(map: &InkMap, left: isize, top: isize, scale: usize) -> (Option<char>, usize) {
    let pitch = PITCH * scale;
    let band = GLYPH_HEIGHT * scale;
    let mut ink = Vec::with_capacity(pitch * band);
    for cy in 0..band {
        for cx in 0..pitch {
            ink.push(map.at(left + cx as isize, top + cy as isize));
        }
    }
    let blank = ink.iter().filter(|&&b| b).count();
    let mut best = (None, blank);
    for g in font::glyphs() {
        let d = glyph_distance(g, &ink, scale, best.1);
        if d < best.1 {
            best = (Some(g.ch), d);
        }
    }
    best
}

fn glyph_distance(g: &Glyph, cell: &[bool], scale: usize, give_up: usize) -> usize {
    let pitch = PITCH * scale;
    let mut d = 0;
    for (cy, row) in cell.chunks_exact(pitch).enumerate() {
        let gr = cy / scale;
        for (cx, &px) in row.iter().enumerate() {
            if px != g.ink(cx / scale, gr) {
                d += 1;
            }
        }
        if d >= give_up {
            return d;
        }
    }
    d
}
