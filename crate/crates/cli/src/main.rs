//! `tcr`: config-driven synthetic data generation, training, evaluation,
//! prediction, β sweeps, and input ablations for the drug-response model.
//!
//! Every command reads one TOML config (or a previous run's manifest),
//! writes its artifacts under `--out` via temp-file-then-rename, and ends
//! by writing a `manifest.json` with the resolved config and the SHA-256
//! of every artifact. Exit status is nonzero exactly when an error
//! surfaced.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "tcr", version, about = "Drug-response model runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand shares.
#[derive(Args)]
struct Common {
    /// Run configuration: a TOML file, or the manifest.json of a prior run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Root seed, overriding the seeds in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated folds to process (default: all folds).
    #[arg(long, value_delimiter = ',')]
    folds: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the [synth] section.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model per selected fold of the split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Reuse an exported split plan instead of recomputing one.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Score a trained checkpoint on one held-out fold.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint JSON written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reuse an exported split plan instead of recomputing one.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Append a predicted column to a drug_id,cell_id pair list.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Checkpoint JSON written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV of drug_id,cell_id pairs (a responses file without ln_ic50).
        #[arg(long)]
        input: PathBuf,
    },
    /// Train and score one run per β on a fixed fold.
    SweepBeta {
        #[command(flatten)]
        common: Common,
        /// Comma-separated β values (default: 0.1 through 1.0).
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Input-ablation experiments.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Which ablation to run.
        #[arg(long)]
        mode: AblateMode,
    },
}

/// The two ablation experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AblateMode {
    /// Replace omics with cell identity under a leave-cell split.
    Onehot,
    /// Keep one omics channel at a time, zeroing the other two.
    SingleOmics,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth { common } => commands::synth::run(common),
        Command::Train { common, split } => commands::train::run(common, split.as_deref()),
        Command::Evaluate {
            common,
            checkpoint,
            split,
        } => commands::evaluate::run(common, checkpoint, split.as_deref()),
        Command::Predict {
            common,
            checkpoint,
            input,
        } => commands::predict::run(common, checkpoint, input),
        Command::SweepBeta { common, betas } => commands::sweep::run(common, betas.as_deref()),
        Command::Ablate { common, mode } => commands::ablate::run(common, *mode),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
