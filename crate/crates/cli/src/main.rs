use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use perceive_core::config::PipelineConfig;
use perceive_core::dataset::{evaluate_dirs, run_dataset, synthesize_dataset, DatasetSpec};
use perceive_core::eval::Report;
use perceive_core::io::CONFIG_FILE;

#[derive(Parser)]
#[command(name = "perceive", version, about = "All-weather LiDAR/camera/map perception")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over every frame of a dataset.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// Pipeline configuration (TOML). Defaults to the dataset's
        /// config.toml, then built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write grid.pgm per frame.
        #[arg(long)]
        grid: bool,
    },
    /// Generate a synthetic dataset with ground truth.
    Synth {
        /// Dataset spec (TOML); omitted keys take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score the outputs of `run` against a dataset's truth files.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

fn load_config(explicit: Option<&Path>, fallback_dir: &Path) -> Result<PipelineConfig> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let p = fallback_dir.join(CONFIG_FILE);
            if !p.exists() {
                return Ok(PipelineConfig::default());
            }
            p
        }
    };
    PipelineConfig::load(&path).with_context(|| format!("reading config {}", path.display()))
}

fn summarize(r: &Report) {
    let iou = r.iou.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "frames {} skipped {} | MR {:.2}% FAR {:.2}% IOU {iou}",
        r.frames, r.skipped, r.mr_pct, r.far_pct
    );
    let total: f64 = r.ms_per_frame.values().sum();
    if total > 0.0 {
        println!("{total:.1} ms/frame");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            dataset,
            config,
            out,
            grid,
        } => {
            let cfg = load_config(config.as_deref(), &dataset)?;
            let report = run_dataset(&dataset, &cfg, &out, grid)?;
            summarize(&report);
        }
        Command::Synth { spec, out, seed } => {
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    DatasetSpec::from_toml(&text)?
                }
                None => DatasetSpec::default(),
            };
            synthesize_dataset(&spec, seed, &out)?;
            println!("wrote {} frames to {}", spec.frames, out.display());
        }
        Command::Eval { pred, truth, report } => {
            let cfg = load_config(None, &pred)?;
            let r = evaluate_dirs(&pred, &truth, &cfg, &report)?;
            summarize(&r);
        }
    }
    Ok(())
}
