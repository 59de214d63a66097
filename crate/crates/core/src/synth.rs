//! Synthetic browser sessions with known ground truth.
//!
//! Frames show a browser anchor icon near the top of the screen and the
//! domain in the built-in bitmap font inside the address bar, plus optional
//! i.i.d. Gaussian pixel noise. The same anchors make up
//! [`builtin_manifest`], so a noise-free frame matches with score 1.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::font;
use crate::matching::{
    BrowserTemplate, FieldOffset, FieldWidth, Rect, TemplateManifest, DEFAULT_THRESHOLD,
};
use crate::raster::{GrayImage, RasterError, RgbImage};

pub const ANCHOR_SIZE: usize = 16;
pub const FIELD_WIDTH: usize = 320;
pub const FIELD_GAP: usize = 6;
/// Text inset from the field's top-left corner.
pub const TEXT_INSET: (usize, usize) = (4, 4);
pub const BACKGROUND: u8 = 214;
pub const FIELD_FILL: u8 = 250;
pub const TEXT_INK: u8 = 40;
/// Pseudo browser id that renders a frame with no browser on screen.
pub const DESKTOP_ID: &str = "none";
pub const DEFAULT_FRAME_SIZE: (usize, usize) = (1280, 720);

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("`{domain}` needs {needed} px but the field is {available} px wide")]
    TextOverflow {
        domain: String,
        needed: usize,
        available: usize,
    },
    #[error("`{0}` contains characters outside the bitmap font")]
    Unsupported(String),
    #[error("browser `{0}` is not in the manifest")]
    UnknownBrowser(String),
    #[error("invalid session: {0}")]
    InvalidSpec(String),
    #[error("frame {width}x{height} cannot hold the browser chrome")]
    FrameTooSmall { width: usize, height: usize },
    #[error("I/O failure on {path}: {reason}")]
    IoFailure { path: PathBuf, reason: String },
}

impl SynthError {
    fn io(path: &Path, reason: impl ToString) -> Self {
        Self::IoFailure {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

impl From<RasterError> for SynthError {
    fn from(e: RasterError) -> Self {
        Self::IoFailure {
            path: PathBuf::new(),
            reason: e.to_string(),
        }
    }
}

fn onion_anchor() -> GrayImage {
    GrayImage::from_fn(ANCHOR_SIZE, ANCHOR_SIZE, |x, y| {
        let dx = x as f64 - 7.5;
        let dy = y as f64 - 8.5;
        let r = (dx * dx + dy * dy).sqrt();
        if r > 7.6 {
            BACKGROUND
        } else if (r as usize).is_multiple_of(3) {
            70
        } else if y < 3 && (6..10).contains(&x) {
            120
        } else {
            236
        }
    })
}

fn puzzle_anchor() -> GrayImage {
    GrayImage::from_fn(ANCHOR_SIZE, ANCHOR_SIZE, |x, y| {
        let body = (2..12).contains(&x) && (4..14).contains(&y);
        let knob_top = (5..9).contains(&x) && (1..4).contains(&y);
        let knob_right = (12..15).contains(&x) && (7..11).contains(&y);
        if body || knob_top || knob_right {
            if (x + 2 * y) % 5 == 0 {
                150
            } else {
                55
            }
        } else {
            245
        }
    })
}

/// Chrome (extension icon) and Tor (onion) anchors, with the address bar
/// immediately right of the anchor.
pub fn builtin_manifest() -> TemplateManifest {
    let offset = FieldOffset {
        dx: (ANCHOR_SIZE + FIELD_GAP) as i64,
        dy: 0,
        width: FieldWidth::Pixels(FIELD_WIDTH),
        height: ANCHOR_SIZE,
    };
    let templates = vec![
        BrowserTemplate {
            browser_id: "chrome".into(),
            template: puzzle_anchor(),
            url_field_offset: offset,
        },
        BrowserTemplate {
            browser_id: "tor".into(),
            template: onion_anchor(),
            url_field_offset: offset,
        },
    ];
    TemplateManifest::new(templates, DEFAULT_THRESHOLD).expect("builtin manifest is valid")
}

/// Where each browser's anchor sits in a frame.
pub fn anchor_position(browser_id: &str) -> (usize, usize) {
    match browser_id {
        "tor" => (64, 52),
        _ => (40, 36),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub domain: String,
    pub browser_id: String,
    pub anchor: (usize, usize),
    pub field_rect: Rect,
}

fn gray(v: u8) -> [u8; 3] {
    [v, v, v]
}

fn add_noise(img: &mut RgbImage, sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    for p in img.pixels_mut() {
        let v = f64::from(*p) + normal.sample(&mut rng);
        *p = v.round().clamp(0.0, 255.0) as u8;
    }
}

/// Renders one browser frame showing `domain` in the address bar.
pub fn render_frame(
    domain: &str,
    browser: &BrowserTemplate,
    frame_size: (usize, usize),
    noise_sigma: f64,
    seed: u64,
) -> Result<(RgbImage, GroundTruth), SynthError> {
    if !font::supports(domain) {
        return Err(SynthError::Unsupported(domain.to_string()));
    }
    let (fw, fh) = frame_size;
    let (ax, ay) = anchor_position(&browser.browser_id);
    let t = &browser.template;
    let off = browser.url_field_offset;
    let field_x = (ax as i64 + off.dx).max(0) as usize;
    let field_y = (ay as i64 + off.dy).max(0) as usize;
    let field_w = match off.width {
        FieldWidth::Pixels(w) => w,
        FieldWidth::ToRightEdge => fw.saturating_sub(field_x),
    };
    let field_h = off.height;
    if ax + t.width() > fw
        || field_x + field_w > fw
        || (ay + t.height()).max(field_y + field_h) > fh / 3
    {
        return Err(SynthError::FrameTooSmall {
            width: fw,
            height: fh,
        });
    }
    let needed = TEXT_INSET.0 + font::text_width(domain, 1);
    if needed > field_w || TEXT_INSET.1 + font::text_height(1) > field_h {
        return Err(SynthError::TextOverflow {
            domain: domain.to_string(),
            needed,
            available: field_w,
        });
    }

    let mut img = RgbImage::filled(fw, fh, gray(BACKGROUND));
    for y in 0..t.height() {
        for x in 0..t.width() {
            img.put(ax + x, ay + y, gray(t.get(x, y)));
        }
    }
    for y in field_y..field_y + field_h {
        for x in field_x..field_x + field_w {
            img.put(x, y, gray(FIELD_FILL));
        }
    }
    let (tx, ty) = (field_x + TEXT_INSET.0, field_y + TEXT_INSET.1);
    font::rasterize(domain, 1, |x, y| img.put(tx + x, ty + y, gray(TEXT_INK)))
        .map_err(|_| SynthError::Unsupported(domain.to_string()))?;
    add_noise(&mut img, noise_sigma, seed);

    let truth = GroundTruth {
        domain: domain.to_string(),
        browser_id: browser.browser_id.clone(),
        anchor: (ax, ay),
        field_rect: Rect {
            x: field_x,
            y: field_y,
            width: field_w,
            height: field_h,
        },
    };
    Ok((img, truth))
}

/// A browserless desktop: a soft vertical gradient with a few flat icons.
pub fn render_desktop(frame_size: (usize, usize), noise_sigma: f64, seed: u64) -> RgbImage {
    let (fw, fh) = frame_size;
    let mut img = RgbImage::filled(fw, fh, [0, 0, 0]);
    for y in 0..fh {
        let shade = (60 + 100 * y / fh.max(1)) as u8;
        for x in 0..fw {
            img.put(x, y, [shade / 2, shade, shade.saturating_add(40)]);
        }
    }
    let icons = [[230, 200, 80], [200, 90, 90], [120, 200, 140]];
    for (i, color) in icons.iter().enumerate() {
        let (x0, y0) = (24, 24 + i * 72);
        for y in y0..(y0 + 48).min(fh) {
            for x in x0..(x0 + 48).min(fw) {
                img.put(x, y, *color);
            }
        }
    }
    add_noise(&mut img, noise_sigma, seed);
    img
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub domain: String,
    pub duration_s: f64,
    pub browser: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub fps: f64,
    pub events: Vec<SessionEvent>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frame_size")]
    pub frame_size: (usize, usize),
}

fn default_frame_size() -> (usize, usize) {
    DEFAULT_FRAME_SIZE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFrame {
    pub index: usize,
    pub domain: String,
    pub browser: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub fps: f64,
    pub frames: Vec<TruthFrame>,
}

impl Truth {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(|e| SynthError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| SynthError::io(path, e))
    }
}

/// Frames an event occupies: `ceil(duration × fps)`.
pub fn event_frames(duration_s: f64, fps: f64) -> usize {
    // tolerate products such as 0.1 * 30 landing a hair above an integer
    (duration_s * fps - 1e-9).ceil().max(0.0) as usize
}

/// Mixes the session seed with a frame index (SplitMix64 finalizer).
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.png")
}

impl SessionSpec {
    pub fn validate(&self, manifest: &TemplateManifest) -> Result<(), SynthError> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(SynthError::InvalidSpec(format!(
                "fps {} must be positive",
                self.fps
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(SynthError::InvalidSpec(format!(
                "noise sigma {} must be >= 0",
                self.noise_sigma
            )));
        }
        for e in &self.events {
            if !(e.duration_s.is_finite() && e.duration_s > 0.0) {
                return Err(SynthError::InvalidSpec(format!(
                    "event `{}` has non-positive duration",
                    e.domain
                )));
            }
            if !font::supports(&e.domain) {
                return Err(SynthError::Unsupported(e.domain.clone()));
            }
            if e.browser != DESKTOP_ID && manifest.get(&e.browser).is_none() {
                return Err(SynthError::UnknownBrowser(e.browser.clone()));
            }
        }
        Ok(())
    }

    /// One `(domain, browser)` pair per frame, in order.
    pub fn frame_plan(&self) -> Vec<(String, String)> {
        self.events
            .iter()
            .flat_map(|e| {
                let label = if e.browser == DESKTOP_ID {
                    String::new()
                } else {
                    e.domain.clone()
                };
                std::iter::repeat_n(
                    (label, e.browser.clone()),
                    event_frames(e.duration_s, self.fps),
                )
            })
            .collect()
    }
}

/// Writes numbered PNG frames and `truth.json` into `out_dir`; returns the
/// truth file path. Events on the `none` browser render desktop frames.
pub fn generate_session(
    spec: &SessionSpec,
    manifest: &TemplateManifest,
    out_dir: &Path,
) -> Result<PathBuf, SynthError> {
    spec.validate(manifest)?;
    fs::create_dir_all(out_dir).map_err(|e| SynthError::io(out_dir, e))?;
    let plan = spec.frame_plan();

    const CHUNK: usize = 16;
    for (c, chunk) in plan.chunks(CHUNK).enumerate() {
        let frames = chunk
            .par_iter()
            .enumerate()
            .map(|(k, (domain, browser))| {
                let index = c * CHUNK + k;
                let seed = frame_seed(spec.seed, index);
                let img = match manifest.get(browser) {
                    Some(t) => render_frame(domain, t, spec.frame_size, spec.noise_sigma, seed)?.0,
                    None => render_desktop(spec.frame_size, spec.noise_sigma, seed),
                };
                Ok((index, img))
            })
            .collect::<Result<Vec<_>, SynthError>>()?;
        for (index, img) in frames {
            let path = out_dir.join(frame_file_name(index));
            img.save_png(&path).map_err(|e| SynthError::io(&path, e))?;
        }
    }

    let truth = Truth {
        fps: spec.fps,
        frames: plan
            .into_iter()
            .enumerate()
            .map(|(index, (domain, browser))| TruthFrame {
                index,
                domain,
                browser,
            })
            .collect(),
    };
    let path = out_dir.join("truth.json");
    let json = serde_json::to_string_pretty(&truth).expect("truth serializes");
    fs::write(&path, json + "\n").map_err(|e| SynthError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::to_grayscale;
    use crate::matching::{best_browser_match, field_rect, match_template};

    fn manifest() -> TemplateManifest {
        builtin_manifest()
    }

    #[test]
    fn anchors_are_distinct() {
        let m = manifest();
        let (chrome, tor) = (&m.templates[0].template, &m.templates[1].template);
        let cross = match_template::<f64>(chrome, tor).unwrap().peak().score;
        assert!(cross < 0.5, "{cross}");
    }

    #[test]
    fn clean_frame_matches_perfectly_at_the_anchor() {
        let m = manifest();
        for t in &m.templates {
            let (img, truth) = render_frame("example.com", t, (640, 240), 0.0, 1).unwrap();
            let top = to_grayscale(&img.top_rows(80));
            let hit = best_browser_match::<f64>(&top, &m).unwrap();
            assert_eq!(hit.browser_id, t.browser_id);
            assert!((hit.score - 1.0).abs() < 1e-9);
            assert_eq!((hit.x, hit.y), truth.anchor);
            assert_eq!(
                field_rect(top.width(), top.height(), &hit, &m).unwrap(),
                truth.field_rect
            );
        }
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let t = &manifest().templates[1];
        let a = render_frame("tor.onion", t, (420, 210), 8.0, 42).unwrap().0;
        let b = render_frame("tor.onion", t, (420, 210), 8.0, 42).unwrap().0;
        let c = render_frame("tor.onion", t, (420, 210), 8.0, 43).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn long_domains_overflow() {
        let t = &manifest().templates[0];
        let long = "a".repeat(500);
        assert!(matches!(
            render_frame(&long, t, (1280, 720), 0.0, 0),
            Err(SynthError::TextOverflow { available: 320, .. })
        ));
        assert!(matches!(
            render_frame("Example.com", t, (1280, 720), 0.0, 0),
            Err(SynthError::Unsupported(_))
        ));
    }

    #[test]
    fn desktop_has_no_browser() {
        let m = manifest();
        for seed in 0..3 {
            let img = render_desktop((1280, 720), 8.0, seed);
            let top = to_grayscale(&img.top_rows(240));
            assert!(best_browser_match::<f64>(&top, &m).is_none());
        }
    }

    #[test]
    fn frame_counts_use_ceiling() {
        assert_eq!(event_frames(3.0, 1.0), 3);
        assert_eq!(event_frames(2.5, 1.0), 3);
        assert_eq!(event_frames(0.1, 30.0), 3);
        assert_eq!(event_frames(1.0, 2.0), 2);
    }

    #[test]
    fn session_layout_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SessionSpec {
            fps: 1.0,
            events: vec![
                SessionEvent {
                    domain: "a.com".into(),
                    duration_s: 3.0,
                    browser: "chrome".into(),
                },
                SessionEvent {
                    domain: "b.onion".into(),
                    duration_s: 2.0,
                    browser: "tor".into(),
                },
            ],
            noise_sigma: 0.0,
            seed: 9,
            frame_size: (440, 210),
        };
        let path = generate_session(&spec, &manifest(), dir.path()).unwrap();
        let truth = Truth::load(&path).unwrap();
        let domains: Vec<_> = truth.frames.iter().map(|f| f.domain.as_str()).collect();
        assert_eq!(domains, ["a.com", "a.com", "a.com", "b.onion", "b.onion"]);
        let pngs = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == "png")
            })
            .count();
        assert_eq!(pngs, truth.frames.len());
    }

    #[test]
    fn empty_session_writes_empty_truth() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SessionSpec {
            fps: 1.0,
            events: vec![],
            noise_sigma: 0.0,
            seed: 0,
            frame_size: DEFAULT_FRAME_SIZE,
        };
        let path = generate_session(&spec, &manifest(), dir.path()).unwrap();
        let truth = Truth::load(&path).unwrap();
        assert!(truth.frames.is_empty());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn spec_validation() {
        let m = manifest();
        let mut spec = SessionSpec {
            fps: 1.0,
            events: vec![SessionEvent {
                domain: "a.com".into(),
                duration_s: 1.0,
                browser: "lynx".into(),
            }],
            noise_sigma: 0.0,
            seed: 0,
            frame_size: DEFAULT_FRAME_SIZE,
        };
        assert!(matches!(
            spec.validate(&m),
            Err(SynthError::UnknownBrowser(_))
        ));
        spec.events[0].browser = DESKTOP_ID.into();
        assert!(spec.validate(&m).is_ok());
        spec.events[0].duration_s = 0.0;
        assert!(matches!(spec.validate(&m), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn spec_json_shape() {
        let spec: SessionSpec = serde_json::from_str(
            r#"{"fps": 2, "events": [{"domain": "a.com", "duration_s": 1.5, "browser": "tor"}],
                "noise_sigma": 8, "seed": 7, "frame_size": [800, 600]}"#,
        )
        .unwrap();
        assert_eq!(spec.frame_size, (800, 600));
        assert_eq!(spec.frame_plan().len(), 3);
    }
}
