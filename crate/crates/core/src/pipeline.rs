//! Frame-to-record extraction for a whole session.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgproc::{enhance, to_grayscale, EnhanceParams};
use crate::ingest::{list_frames, load_and_crop_top, FrameRef, IngestError, DEFAULT_CROP_FRACTION};
use crate::matching::{best_browser_match, crop_url_field, TemplateManifest, DEFAULT_THRESHOLD};
use crate::ocr::{EngineConfig, Recognizer};
use crate::postprocess::{consensus_smooth, SmoothParams, UrlRecord};
use crate::raster::GrayImage;

pub const DEFAULT_GLOB: &str = "*.png";

/// Every knob of an extraction run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub frames_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub glob: String,
    pub fps: f64,
    pub crop_fraction: f64,
    /// Overrides the manifest's own threshold when set.
    pub threshold: Option<f64>,
    pub enhance: EnhanceParams,
    pub ocr: EngineConfig,
    pub smooth: bool,
    pub smoothing: SmoothParams,
    pub out_path: PathBuf,
    /// Worker threads; 0 uses every available processor.
    pub threads: usize,
    pub debug_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            frames_dir: PathBuf::from("."),
            manifest_path: PathBuf::from("manifest.json"),
            glob: DEFAULT_GLOB.to_string(),
            fps: 1.0,
            crop_fraction: DEFAULT_CROP_FRACTION,
            threshold: None,
            enhance: EnhanceParams::default(),
            ocr: EngineConfig::default(),
            smooth: true,
            smoothing: SmoothParams::default(),
            out_path: PathBuf::from("records.jsonl"),
            threads: 0,
            debug_dir: None,
        }
    }
}

impl RunConfig {
    pub fn effective_threshold(&self, manifest: &TemplateManifest) -> f64 {
        self.threshold.unwrap_or(manifest.threshold)
    }
}

/// Defaults echoed by `--dump-config` when no manifest is loaded.
pub fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

/// Per-frame stage images written when a debug directory is configured.
struct DebugSink<'a> {
    dir: &'a Path,
}

impl DebugSink<'_> {
    fn dump(&self, index: usize, stage: &str, img: &GrayImage) {
        // best effort: debug output never fails a run
        let _ = img.save_png(&self.dir.join(format!("{index:05}_{stage}.png")));
    }
}

/// Runs every per-frame stage for one frame. Failures become statuses.
pub fn process_frame(
    frame: &FrameRef,
    manifest: &TemplateManifest,
    cfg: &RunConfig,
    recognizer: &Recognizer,
) -> UrlRecord {
    let debug = cfg.debug_dir.as_deref().map(|dir| DebugSink { dir });
    let t = frame.timestamp_s;
    let top = match load_and_crop_top(frame, cfg.crop_fraction) {
        Ok(img) => to_grayscale(&img),
        Err(_) => return UrlRecord::ocr_failed(t, "unknown"),
    };
    let Some(hit) = best_browser_match::<f64>(&top, manifest) else {
        return UrlRecord::no_browser(t);
    };
    let Ok(field) = crop_url_field(&top, &hit, manifest) else {
        return UrlRecord::ocr_failed(t, &hit.browser_id);
    };
    let Ok(stages) = enhance(&field, &cfg.enhance) else {
        return UrlRecord::ocr_failed(t, &hit.browser_id);
    };
    if let Some(sink) = &debug {
        sink.dump(frame.index, "0_field", &field);
        sink.dump(frame.index, "1_rescaled", &stages.rescaled);
        sink.dump(frame.index, "2_denoised", &stages.denoised);
        sink.dump(frame.index, "3_sharpened", &stages.sharpened);
    }
    let ocr = recognizer.recognize(&stages.sharpened);
    if !ocr.ok {
        return UrlRecord::ocr_failed(t, &hit.browser_id);
    }
    UrlRecord::from_text(t, &hit.browser_id, &ocr.text)
}

/// Records for `frames` in input order, before smoothing.
pub fn extract_frames(
    frames: &[FrameRef],
    manifest: &TemplateManifest,
    cfg: &RunConfig,
) -> Result<Vec<UrlRecord>, PipelineError> {
    if !(cfg.crop_fraction > 0.0 && cfg.crop_fraction <= 1.0) {
        return Err(PipelineError::Config(format!(
            "crop fraction {} is outside (0, 1]",
            cfg.crop_fraction
        )));
    }
    cfg.enhance
        .denoise
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let threshold = cfg.effective_threshold(manifest);
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PipelineError::Config(format!(
            "threshold {threshold} is outside (0, 1]"
        )));
    }
    let mut manifest = manifest.clone();
    manifest.threshold = threshold;
    if let Some(dir) = &cfg.debug_dir {
        fs::create_dir_all(dir)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", dir.display())))?;
    }

    let threads = if cfg.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.threads
    };
    let recognizer = Recognizer::new(cfg.ocr.clone(), threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    // indexed collect keeps timestamp order whatever the completion order
    Ok(pool.install(|| {
        frames
            .par_iter()
            .map(|f| process_frame(f, &manifest, cfg, &recognizer))
            .collect()
    }))
}

/// Lists the session, extracts every frame and applies smoothing if enabled.
pub fn run_extract(
    cfg: &RunConfig,
    manifest: &TemplateManifest,
) -> Result<Vec<UrlRecord>, PipelineError> {
    let frames = list_frames(&cfg.frames_dir, &cfg.glob, cfg.fps)?;
    let records = extract_frames(&frames, manifest, cfg)?;
    Ok(if cfg.smooth {
        consensus_smooth(&records, cfg.smoothing)
    } else {
        records
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::Status;
    use crate::synth::{builtin_manifest, render_desktop, render_frame};

    #[test]
    fn defaults_are_the_published_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.fps, 1.0);
        assert_eq!(cfg.crop_fraction, 1.0 / 3.0);
        assert_eq!(cfg.enhance.rescale_factor, 3);
        assert_eq!(cfg.enhance.denoise.patch_size, 7);
        assert_eq!(cfg.enhance.denoise.search_window, 21);
        assert_eq!(cfg.enhance.denoise.strength_h, 10.0);
        assert_eq!(default_threshold(), 0.8);
        assert!(cfg.smooth);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig {
            threshold: Some(0.7),
            threads: 3,
            ..RunConfig::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
        assert_eq!(
            serde_json::from_str::<RunConfig>("{}").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn frames_become_records_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = builtin_manifest();
        let size = (480, 216);
        render_frame("abc.org", &m.templates[0], size, 0.0, 0)
            .unwrap()
            .0
            .save_png(&dir.path().join("f_2.png"))
            .unwrap();
        render_desktop(size, 0.0, 0)
            .save_png(&dir.path().join("f_10.png"))
            .unwrap();
        render_frame("x.onion", &m.templates[1], size, 0.0, 0)
            .unwrap()
            .0
            .save_png(&dir.path().join("f_1.png"))
            .unwrap();
        let cfg = RunConfig {
            frames_dir: dir.path().to_path_buf(),
            threads: 2,
            ..RunConfig::default()
        };
        let recs = run_extract(&cfg, &m).unwrap();
        let got: Vec<_> = recs
            .iter()
            .map(|r| {
                (
                    r.timestamp_s,
                    r.browser_id.as_str(),
                    r.domain.as_str(),
                    r.status,
                )
            })
            .collect();
        assert_eq!(
            got,
            [
                (0.0, "tor", "x.onion", Status::Ok),
                (1.0, "chrome", "abc.org", Status::Ok),
                (2.0, "none", "", Status::NoBrowser),
            ]
        );
    }

    #[test]
    fn threshold_override_disables_matching() {
        let dir = tempfile::tempdir().unwrap();
        let m = builtin_manifest();
        render_frame("abc.org", &m.templates[0], (480, 216), 8.0, 3)
            .unwrap()
            .0
            .save_png(&dir.path().join("a.png"))
            .unwrap();
        let cfg = RunConfig {
            frames_dir: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        assert_eq!(run_extract(&cfg, &m).unwrap()[0].status, Status::Ok);
        let strict = RunConfig {
            threshold: Some(1.0),
            ..cfg.clone()
        };
        assert_eq!(
            run_extract(&strict, &m).unwrap()[0].status,
            Status::NoBrowser
        );
        let bad = RunConfig {
            threshold: Some(1.5),
            ..cfg
        };
        assert!(matches!(
            run_extract(&bad, &m),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn undecodable_frames_are_isolated() {
        let frames = [FrameRef {
            path: PathBuf::from("/nonexistent/frame.png"),
            index: 0,
            timestamp_s: 0.0,
        }];
        let recs = extract_frames(&frames, &builtin_manifest(), &RunConfig::default()).unwrap();
        assert_eq!(recs[0].status, Status::OcrFailed);
    }
}
