//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use matseg_core::metrics::EvalKind;

use crate::config::{BackendChoice, BaselineMethod, ConfigError, RunConfig};
use crate::evaluate::evaluate_dirs;
use crate::io;
use crate::neural::{resolve_model_dir, NeuralBackend};
use crate::run::{self, RunManifest};

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_FAILURES: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "matseg", version, about = "Training-free segmentation of material micrographs")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Reserved; every stage is deterministic.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Model directory; overrides the config and MATSEG_MODEL_DIR.
    #[arg(long, global = true)]
    pub model_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Grain,
    Phase,
}

impl From<KindArg> for EvalKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Grain => EvalKind::Grain,
            KindArg::Phase => EvalKind::Phase,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment every image in a directory (or a single image).
    Segment { input: PathBuf, output: PathBuf },
    /// Score predictions against ground truth, matched by file stem.
    Evaluate {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        tolerance: Option<u32>,
        /// Where metrics.csv and metrics.json go (default: the prediction directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write prompt points and a prompt overlay.
    Prompts { image: PathBuf, output: PathBuf },
    /// Run a conventional method: otsu, adaptive, canny or watershed.
    Baseline { method: String, input: PathBuf, output: PathBuf },
    /// Region statistics for existing label maps.
    Stats {
        labels: PathBuf,
        /// Source images, matched by stem, for intensity statistics.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config_error(e: &ConfigError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn fatal(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_CONFIG)
}

fn load_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    match &cli.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn jobs(cli: &Cli) -> usize {
    cli.jobs
        .filter(|&j| j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn report(manifest: &RunManifest, out: &Path) -> ExitCode {
    println!(
        "{} image(s) written to {}, {} failed",
        manifest.images.len(),
        out.display(),
        manifest.failures.len()
    );
    if manifest.failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    for f in &manifest.failures {
        eprintln!("failed: {}: {}", f.image, f.error);
    }
    ExitCode::from(EXIT_FAILURES)
}

fn list_inputs(input: &Path) -> Result<Vec<PathBuf>, ExitCode> {
    io::list_rasters(input).map_err(fatal)
}

fn segment(cli: &Cli, mut cfg: RunConfig, input: &Path, output: &Path) -> ExitCode {
    let inputs = match list_inputs(input) {
        Ok(v) => v,
        Err(c) => return c,
    };
    let jobs = jobs(cli);
    let manifest = match cfg.backend.clone() {
        BackendChoice::Neural { model_dir } => {
            let Some(dir) = resolve_model_dir(cli.model_dir.as_deref(), model_dir.as_deref()) else {
                return config_error(&ConfigError {
                    key: "backend.model_dir".into(),
                    reason: "no model directory; pass --model-dir, set backend.model_dir or MATSEG_MODEL_DIR".into(),
                });
            };
            cfg.backend = BackendChoice::Neural { model_dir: Some(dir.clone()) };
            let backend = match NeuralBackend::load(&dir) {
                Ok(b) => b,
                Err(e) => return fatal(e),
            };
            run::run_batch("segment", input, &inputs, output, jobs, &cfg, |p| {
                let img = run::load_input(p, &cfg)?;
                run::segment_with(p, &img, &cfg, &backend)
            })
        }
        BackendChoice::Oracle { truth_dir } => {
            let Some(dir) = truth_dir else {
                return config_error(&ConfigError {
                    key: "backend.truth_dir".into(),
                    reason: "required for the oracle backend".into(),
                });
            };
            let truth = match run::index_by_stem(&dir) {
                Ok(t) => t,
                Err(e) => return fatal(e),
            };
            run::run_batch("segment", input, &inputs, output, jobs, &cfg, |p| {
                let img = run::load_input(p, &cfg)?;
                run::oracle_image(p, &img, &cfg, &truth)
            })
        }
        BackendChoice::Baseline(method) => run::run_batch("segment", input, &inputs, output, jobs, &cfg, |p| {
            let img = run::load_input(p, &cfg)?;
            run::baseline_image(p, &img, method, &cfg)
        }),
    };
    match manifest {
        Ok(m) => report(&m, output),
        Err(e) => fatal(e),
    }
}

pub fn run(cli: Cli) -> ExitCode {
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    match &cli.command {
        Command::Segment { input, output } => segment(&cli, cfg, input, output),
        Command::Baseline { method, input, output } => {
            let Some(m) = BaselineMethod::parse(method) else {
                return fatal(format!("unknown baseline method `{method}`; expected otsu, adaptive, canny or watershed"));
            };
            let mut cfg = cfg;
            cfg.backend = BackendChoice::Baseline(m);
            segment(&cli, cfg, input, output)
        }
        Command::Prompts { image, output } => {
            let inputs = match list_inputs(image) {
                Ok(v) => v,
                Err(c) => return c,
            };
            match run::run_batch("prompts", image, &inputs, output, jobs(&cli), &cfg, |p| {
                let img = run::load_input(p, &cfg)?;
                run::prompts_image(p, &img, &cfg)
            }) {
                Ok(m) => report(&m, output),
                Err(e) => fatal(e),
            }
        }
        Command::Stats { labels, images, out } => {
            let inputs = match list_inputs(labels) {
                Ok(v) => v,
                Err(c) => return c,
            };
            let sources = match images.as_deref().map(run::index_by_stem).transpose() {
                Ok(s) => s,
                Err(e) => return fatal(e),
            };
            match run::run_batch("stats", labels, &inputs, out, jobs(&cli), &cfg, |p| {
                let source = match &sources {
                    Some(map) => Some(map.get(&io::image_stem(p)).ok_or_else(|| {
                        run::ImageError::Other(format!("no source image named {}.*", io::image_stem(p)))
                    })?),
                    None => None,
                };
                run::stats_for_labels(p, source.map(PathBuf::as_path), &cfg)
            }) {
                Ok(m) => report(&m, out),
                Err(e) => fatal(e),
            }
        }
        Command::Evaluate { pred, gt, kind, tolerance, out } => {
            let kind = kind.map(EvalKind::from).unwrap_or(cfg.kind);
            let tolerance = tolerance.unwrap_or(cfg.tolerance);
            let report = match evaluate_dirs(pred, gt, kind, tolerance) {
                Ok(r) => r,
                Err(e) => return fatal(e),
            };
            let out = out.clone().unwrap_or_else(|| if pred.is_dir() { pred.clone() } else { PathBuf::from(".") });
            if let Err(e) = std::fs::create_dir_all(&out) {
                return fatal(format!("{}: {e}", out.display()));
            }
            let mut json = serde_json::to_vec_pretty(&report).expect("plain data serializes");
            json.push(b'\n');
            for (name, bytes) in [("metrics.csv", report.to_csv()), ("metrics.json", json)] {
                if let Err(e) = io::write_file(&out.join(name), &bytes) {
                    return fatal(e);
                }
            }
            println!("{} image(s), kind {}, tolerance {}", report.images.len(), report.kind, tolerance);
            for (name, v) in &report.mean {
                println!("mean {name}: {v:.4}");
            }
            let mut code = ExitCode::SUCCESS;
            for (image, err) in &report.failures {
                eprintln!("failed: {image}: {err}");
                code = ExitCode::from(EXIT_FAILURES);
            }
            for u in &report.unmatched {
                eprintln!("unmatched: {u}");
                code = ExitCode::from(EXIT_FAILURES);
            }
            code
        }
    }
}

pub fn main() -> ExitCode {
    run(Cli::parse())
}
