use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use urltrace::imgproc::{
    DenoiseParams, EnhanceParams, DEFAULT_PATCH, DEFAULT_RESCALE, DEFAULT_STRENGTH, DEFAULT_WINDOW,
};
use urltrace::ingest::IngestError;
use urltrace::matching::{TemplateManifest, DEFAULT_THRESHOLD};
use urltrace::ocr::{EngineConfig, EngineKind, DEFAULT_CMD_TEMPLATE, DEFAULT_TIMEOUT_S};
use urltrace::pipeline::{run_extract, PipelineError, RunConfig, DEFAULT_GLOB};
use urltrace::postprocess::{SmoothParams, DEFAULT_SMOOTH_EDIT, DEFAULT_SMOOTH_RADIUS};
use urltrace::synth::{builtin_manifest, generate_session, SessionSpec};
use urltrace::timeline::{
    aggregate_dwell, path_segments, read_dwell_csv, read_path_csv, read_records, render_dwell_svg,
    render_path_svg, write_dwell_csv, write_path_csv, write_records, DEFAULT_MAX_GAP,
};

#[derive(Parser)]
#[command(
    name = "urltrace",
    version,
    about = "Browsing timelines from screen-recording frames"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read every frame and write one URL record per frame as JSONL.
    Extract(ExtractArgs),
    /// Turn records into dwell-time and navigation-path CSVs.
    Aggregate(AggregateArgs),
    /// Draw SVG charts from dwell and path CSVs.
    Render(RenderArgs),
    /// Generate a synthetic session with ground truth.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OcrChoice {
    Stub,
    External,
}

#[derive(Args)]
struct ExtractArgs {
    /// Directory holding the frame images.
    #[arg(long, default_value = ".")]
    frames: PathBuf,
    /// Template manifest (JSON).
    #[arg(long, default_value = "manifest.json")]
    manifest: PathBuf,
    /// Filename pattern selecting frames inside --frames.
    #[arg(long, default_value = DEFAULT_GLOB)]
    glob: String,
    #[arg(long, default_value_t = 1.0)]
    fps: f64,
    /// Share of the frame height kept from the top, as a decimal or a ratio.
    #[arg(long, default_value = "1/3", value_parser = parse_fraction)]
    crop_fraction: f64,
    /// Minimum match score; overrides the manifest value [default: 0.8]
    #[arg(long)]
    threshold: Option<f64>,
    /// Upscaling factor applied to the address-bar crop.
    #[arg(long, default_value_t = DEFAULT_RESCALE)]
    rescale: usize,
    /// Denoising patch side (odd).
    #[arg(long, default_value_t = DEFAULT_PATCH)]
    nlm_patch: usize,
    /// Denoising search window side (odd).
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    nlm_window: usize,
    /// Denoising filter strength.
    #[arg(long, default_value_t = DEFAULT_STRENGTH)]
    nlm_h: f64,
    #[arg(long, value_enum, default_value = "stub")]
    ocr: OcrChoice,
    /// External OCR executable.
    #[arg(long, env = "URLTRACE_OCR_EXE")]
    ocr_exe: Option<PathBuf>,
    /// Argument shape for the external engine.
    #[arg(long, default_value = DEFAULT_CMD_TEMPLATE)]
    ocr_cmd_template: String,
    /// Seconds before an external OCR run is killed.
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_S)]
    ocr_timeout: f64,
    /// Skip cross-frame consensus repair.
    #[arg(long)]
    no_smooth: bool,
    #[arg(long, default_value_t = DEFAULT_SMOOTH_RADIUS)]
    smooth_radius: usize,
    #[arg(long, default_value_t = DEFAULT_SMOOTH_EDIT)]
    smooth_edit: usize,
    /// Records output file.
    #[arg(long, default_value = "records.jsonl")]
    out: PathBuf,
    /// Worker threads (0 = all processors).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Write per-stage field images here.
    #[arg(long)]
    debug_dir: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct AggregateArgs {
    /// Records JSONL written by `extract`.
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    fps: f64,
    /// Interruptions of at most this many frames do not split a path segment.
    #[arg(long, default_value_t = DEFAULT_MAX_GAP)]
    max_gap: usize,
    /// Output directory for dwell.csv and path.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    dwell: Option<PathBuf>,
    #[arg(long)]
    path: Option<PathBuf>,
    /// Output directory for dwell.svg and path.svg.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Session description (JSON).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let value = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|e| format!("{e}"))?;
            let d: f64 = d.trim().parse().map_err(|e| format!("{e}"))?;
            n / d
        }
        None => s.trim().parse().map_err(|e| format!("{e}"))?,
    };
    if value > 0.0 && value <= 1.0 {
        Ok(value)
    } else {
        Err(format!("{s} is outside (0, 1]"))
    }
}

impl ExtractArgs {
    fn run_config(&self) -> RunConfig {
        let ocr = EngineConfig {
            kind: match self.ocr {
                OcrChoice::Stub => EngineKind::Stub,
                OcrChoice::External => EngineKind::External,
            },
            executable: self.ocr_exe.clone(),
            cmd_template: self.ocr_cmd_template.clone(),
            timeout_s: self.ocr_timeout,
            ..EngineConfig::default()
        };
        RunConfig {
            frames_dir: self.frames.clone(),
            manifest_path: self.manifest.clone(),
            glob: self.glob.clone(),
            fps: self.fps,
            crop_fraction: self.crop_fraction,
            threshold: self.threshold,
            enhance: EnhanceParams {
                rescale_factor: self.rescale,
                denoise: DenoiseParams::new(self.nlm_patch, self.nlm_window, self.nlm_h),
            },
            ocr,
            smooth: !self.no_smooth,
            smoothing: SmoothParams {
                radius: self.smooth_radius,
                max_edit: self.smooth_edit,
            },
            out_path: self.out.clone(),
            threads: self.threads,
            debug_dir: self.debug_dir.clone(),
        }
    }
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

fn cmd_extract(args: &ExtractArgs) -> Result<(), Failure> {
    let mut cfg = args.run_config();
    if args.dump_config {
        cfg.threshold = Some(cfg.threshold.unwrap_or(DEFAULT_THRESHOLD));
        let json = serde_json::to_string_pretty(&cfg).context("serializing config")?;
        println!("{json}");
        return Ok(());
    }
    if cfg.ocr.kind == EngineKind::External && cfg.ocr.executable.is_none() {
        return Err(anyhow!("--ocr external needs --ocr-exe or URLTRACE_OCR_EXE").into());
    }
    let manifest = TemplateManifest::load(&cfg.manifest_path).map_err(anyhow::Error::new)?;
    let records = match run_extract(&cfg, &manifest) {
        Ok(r) => r,
        Err(PipelineError::Ingest(e @ IngestError::EmptySession { .. })) => {
            return Err(Failure {
                code: 2,
                error: e.into(),
            })
        }
        Err(e) => return Err(anyhow::Error::new(e).into()),
    };
    let out = create(&cfg.out_path)?;
    write_records(out, &records).with_context(|| format!("writing {}", cfg.out_path.display()))?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn cmd_aggregate(args: &AggregateArgs) -> Result<()> {
    if !(args.fps.is_finite() && args.fps > 0.0) {
        return Err(anyhow!("--fps must be positive, got {}", args.fps));
    }
    let records = read_records(open(&args.records)?)
        .with_context(|| format!("reading {}", args.records.display()))?;
    let dwell = aggregate_dwell(&records, args.fps);
    let path = path_segments(&records, args.max_gap);
    write_dwell_csv(create(&args.out.join("dwell.csv"))?, &dwell.rows())?;
    write_path_csv(create(&args.out.join("path.csv"))?, &path)?;
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    if args.dwell.is_none() && args.path.is_none() {
        return Err(anyhow!("render needs --dwell, --path or both"));
    }
    if let Some(p) = &args.dwell {
        let rows = read_dwell_csv(open(p)?).with_context(|| format!("reading {}", p.display()))?;
        let mut out = create(&args.out.join("dwell.svg"))?;
        out.write_all(&render_dwell_svg(&rows))?;
        out.flush()?;
    }
    if let Some(p) = &args.path {
        let segs = read_path_csv(open(p)?).with_context(|| format!("reading {}", p.display()))?;
        let mut out = create(&args.out.join("path.svg"))?;
        out.write_all(&render_path_svg(&segs))?;
        out.flush()?;
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))?;
    let spec: SessionSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.spec.display()))?;
    let manifest = builtin_manifest();
    generate_session(&spec, &manifest, &args.out)?;
    manifest.save(&args.out.join("templates"))?;
    Ok(())
}

/// The error chain joined with `: `, skipping causes already quoted by the
/// message above them.
fn describe(error: &anyhow::Error) -> String {
    let mut text = error.to_string();
    for cause in error.chain().skip(1) {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            text = format!("{text}: {msg}");
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Extract(a) => cmd_extract(a),
        Command::Aggregate(a) => cmd_aggregate(a).map_err(Failure::from),
        Command::Render(a) => cmd_render(a).map_err(Failure::from),
        Command::Synth(a) => cmd_synth(a).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_parse_as_ratio_or_decimal() {
        assert_eq!(
            parse_fraction("1/3").unwrap(),
            urltrace::ingest::DEFAULT_CROP_FRACTION
        );
        assert_eq!(parse_fraction("0.5").unwrap(), 0.5);
        assert!(parse_fraction("4/3").is_err());
        assert!(parse_fraction("0").is_err());
        assert!(parse_fraction("x").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
