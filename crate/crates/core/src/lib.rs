//! Turns screen-recording frames into a per-second timeline of visited
//! domains: browser anchor matching, address-bar enhancement, OCR, text
//! repair and dwell aggregation.
//!
//! The numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for common uses.

pub mod font;
pub mod imgproc;
pub mod ingest;
pub mod matching;
pub mod ocr;
pub mod pipeline;
pub mod postprocess;
pub mod raster;
pub mod scalar;
pub mod synth;
pub mod timeline;

pub use imgproc::{
    enhance, nlm_denoise, rescale, sharpen, to_grayscale, DenoiseParams, EnhanceParams,
};
pub use ingest::{list_frames, load_and_crop_top, FrameRef};
pub use matching::{
    best_browser_match, crop_url_field, field_rect, match_template, BrowserTemplate, MatchResult,
    ResponseSurface, TemplateManifest,
};
pub use ocr::{recognize, EngineConfig, EngineKind, OcrResult};
pub use pipeline::{run_extract, RunConfig};
pub use postprocess::{clean_ocr_text, consensus_smooth, extract_domain, Status, UrlRecord};
pub use raster::{GrayImage, RgbImage};
pub use scalar::Scalar;

pub type ResponseSurface64 = ResponseSurface<f64>;
pub type ResponseSurface32 = ResponseSurface<f32>;
pub type MatchResult64 = MatchResult<f64>;
pub type MatchResult32 = MatchResult<f32>;
pub type DenoiseParams64 = DenoiseParams<f64>;
pub type DenoiseParams32 = DenoiseParams<f32>;
