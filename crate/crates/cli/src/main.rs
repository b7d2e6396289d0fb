//! `soda`: train, sample, probe, and analyze latent-guided denoising
//! diffusion models on the procedural factor dataset.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use soda_cli::commands::analyze::{AnalyzeAction, AnalyzeArgs};
use soda_cli::commands::eval_metrics::EvalMetricsArgs;
use soda_cli::commands::probe::ProbeArgs;
use soda_cli::commands::sample::{SampleArgs, SampleMode};
use soda_cli::commands::train::TrainArgs;
use soda_cli::commands::{analyze, eval_metrics, probe, sample, train};
use soda_cli::error::Result;

/// Flags shared by every subcommand.  Each command uses the subset that
/// applies to it; `--seed` overrides the config's `[run] seed` everywhere.
#[derive(Debug, Args)]
struct Common {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Checkpoint to load (or, for `train`, to resume from).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Master seed override; every random stream derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts (created if missing; default `.`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Guidance strength override for sampling-style commands.
    #[arg(long, global = true)]
    guidance: Option<f64>,
    /// Reverse-process step count override.
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// Comma-separated latent sections to zero (`sample --mode
    /// uncond_layers`).
    #[arg(long, global = true)]
    sections_mask: Option<String>,
}

#[derive(Debug, Parser)]
#[command(
    name = "soda",
    version,
    about = "Self-supervised diffusion: training and latent analysis",
    propagate_version = true
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a config file, checkpointing periodically.
    Train {
        /// Override `[training] steps`.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Decode images from a checkpoint and score them against targets.
    Sample {
        /// One of: recon, novel_view, uncond_layers.
        #[arg(long, default_value = "recon")]
        mode: String,
        /// Comma-separated combination indices (default: first holdout
        /// samples).
        #[arg(long)]
        indices: Option<String>,
        /// How many holdout samples when --indices is absent.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Fit linear probes on frozen latents; report per-factor accuracy.
    Probe,
    /// Latent-space diagnostics: dci, pca, interp, traverse.
    Analyze {
        /// One of: dci, pca, interp, traverse.
        #[arg(long)]
        action: String,
        /// For interp: the two combination indices to connect.
        #[arg(long)]
        indices: Option<String>,
        /// For traverse: the latent section to restrict to.
        #[arg(long)]
        section: Option<usize>,
    },
    /// Reconstruction metrics (PSNR / SSIM / latent Fréchet) on holdout
    /// samples.
    EvalMetrics,
}

fn dispatch(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Train { steps } => train::run(&TrainArgs {
            config: c.config.as_deref(),
            checkpoint: c.checkpoint.as_deref(),
            seed: c.seed,
            out_dir: c.out_dir.as_deref(),
            steps: *steps,
        }),
        Command::Sample {
            mode,
            indices,
            count,
        } => sample::run(&SampleArgs {
            checkpoint: c.checkpoint.as_deref(),
            mode: SampleMode::parse(mode)?,
            indices: indices.as_deref(),
            count: *count,
            guidance: c.guidance,
            stride: c.stride,
            sections_mask: c.sections_mask.as_deref(),
            seed: c.seed,
            out_dir: c.out_dir.as_deref(),
        }),
        Command::Probe => probe::run(&ProbeArgs {
            checkpoint: c.checkpoint.as_deref(),
            seed: c.seed,
            out_dir: c.out_dir.as_deref(),
        }),
        Command::Analyze {
            action,
            indices,
            section,
        } => analyze::run(&AnalyzeArgs {
            checkpoint: c.checkpoint.as_deref(),
            action: AnalyzeAction::parse(action)?,
            indices: indices.as_deref(),
            section: *section,
            guidance: c.guidance,
            stride: c.stride,
            seed: c.seed,
            out_dir: c.out_dir.as_deref(),
        }),
        Command::EvalMetrics => eval_metrics::run(&EvalMetricsArgs {
            checkpoint: c.checkpoint.as_deref(),
            guidance: c.guidance,
            stride: c.stride,
            seed: c.seed,
            out_dir: c.out_dir.as_deref(),
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
