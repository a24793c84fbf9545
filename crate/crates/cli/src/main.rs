//! `sentinel` command-line runner.
//!
//! Exit status: 0 when no alarm fired, 2 when at least one did (classify and
//! run), 1 on any operational error.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use sentinel_core::alerting::{HttpTransport, TOKEN_ENV};
use sentinel_core::pipeline::{self, RunConfig, RunContext};

const EXIT_ERROR: u8 = 1;
const EXIT_ALARM: u8 = 2;

#[derive(Parser)]
#[command(name = "sentinel", version, about = "Frame-sequence crime detection, object-detection post-processing and activity heatmaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print per-layer shapes and parameter counts of a model manifest.
    ModelInfo {
        manifest: PathBuf,
        /// Weight blob; defaults to the manifest path with a .bin extension (optional).
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Classify every frame and print one JSON verdict per line.
    Classify {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write verdicts here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode grid predictions, apply NMS, print one JSON detection per line.
    Detect {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accumulate detection JSONL into a heatmap image.
    Heatmap {
        #[command(flatten)]
        config: ConfigArgs,
        /// Detection JSONL; reads stdin when omitted.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Classify, detect, accumulate and alert in one pass.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    frames_dir: Option<PathBuf>,
    /// Glob for frame file names.
    #[arg(long)]
    pattern: Option<String>,
    /// Classifier manifest.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    detector_model: Option<PathBuf>,
    #[arg(long)]
    detector_weights: Option<PathBuf>,
    #[arg(long)]
    predictions_dir: Option<PathBuf>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    frame_threshold: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    trigger: Option<usize>,
    #[arg(long)]
    conf_threshold: Option<f64>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Heatmap grid side.
    #[arg(long)]
    grid: Option<usize>,
    /// Pixels per heatmap cell.
    #[arg(long)]
    cell_px: Option<usize>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    cooldown: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    backoff_base: Option<f64>,
    #[arg(long)]
    event_log: Option<PathBuf>,
    #[arg(long)]
    heatmap_out: Option<PathBuf>,
    /// Grid state as JSON.
    #[arg(long)]
    heatmap_json: Option<PathBuf>,
    #[arg(long)]
    verdicts_out: Option<PathBuf>,
    #[arg(long)]
    detections_out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v.into(); })*
            };
        }
        set! {
            frames_dir => frames_dir,
            model => classifier_model,
            weights => classifier_weights,
            detector_model => detector_model,
            detector_weights => detector_weights,
            predictions_dir => predictions_dir,
            endpoint => alert.endpoint,
            event_log => event_log,
            heatmap_out => heatmap_out,
            heatmap_json => heatmap_json,
            verdicts_out => verdicts_out,
            detections_out => detections_out,
            pattern => frame_pattern,
            fps => fps,
            frame_threshold => frame_threshold,
            window => window,
            trigger => trigger,
            conf_threshold => conf_threshold,
            iou_threshold => iou_threshold,
            grid => heatmap_grid,
            cell_px => heatmap_cell_px,
            cooldown => alert.cooldown_s,
            max_retries => alert.max_retries,
            backoff_base => alert.backoff_base_s,
        }
        c.validate()?;
        Ok(c)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn alarm_code(alarm: bool) -> u8 {
    if alarm {
        EXIT_ALARM
    } else {
        0
    }
}

fn execute(command: Command) -> Result<u8> {
    match command {
        Command::ModelInfo {
            manifest,
            weights,
            json,
        } => {
            let info = pipeline::model_info(&manifest, weights.as_deref())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&info)?);
            } else {
                print!("{}", pipeline::format_model_info(&info));
            }
            Ok(0)
        }
        Command::Classify { config, out } => {
            let config = config.resolve()?;
            let outcome = pipeline::classify(&config)?;
            emit(out.as_deref(), &outcome.jsonl())?;
            Ok(alarm_code(outcome.alarm_fired()))
        }
        Command::Detect { config, out } => {
            let config = config.resolve()?;
            let per_frame = pipeline::detect(&config)?;
            emit(out.as_deref(), &pipeline::detections_jsonl(&per_frame))?;
            Ok(0)
        }
        Command::Heatmap {
            config,
            detections,
        } => {
            let config = config.resolve()?;
            let out = config
                .heatmap_out
                .as_deref()
                .context("heatmap needs --heatmap-out (or heatmap_out in the config)")?;
            let text = match &detections {
                Some(path) => fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?,
                None => {
                    let mut s = String::new();
                    io::stdin().read_to_string(&mut s)?;
                    s
                }
            };
            let source = detections
                .as_ref()
                .map_or_else(|| "stdin".to_string(), |p| p.display().to_string());
            let grid = pipeline::heatmap_from_jsonl(&text, config.heatmap_grid)
                .with_context(|| format!("parsing detections from {source}"))?;
            pipeline::write_file(out, &grid.render_ppm(config.heatmap_cell_px))?;
            if let Some(path) = &config.heatmap_json {
                pipeline::write_file(path, grid.to_json().as_bytes())?;
            }
            Ok(0)
        }
        Command::Run { config } => {
            let config = config.resolve()?;
            let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
            let mut transport = HttpTransport::default();
            let summary = pipeline::run(
                &config,
                RunContext {
                    token,
                    transport: &mut transport,
                    sleep: &mut std::thread::sleep,
                },
            )?;
            println!("{}", serde_json::to_string(&summary)?);
            Ok(alarm_code(summary.alarms > 0))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
