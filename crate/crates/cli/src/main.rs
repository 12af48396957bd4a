//! `sleepformer`: ingest EEG studies, train and evaluate a sleep stager.
//!
//! Every command that writes artifacts creates a new timestamped directory
//! under `--runs-dir` holding `manifest.json` (arguments, resolved config,
//! seed, code version and SHA-256 digests of inputs and outputs).

mod commands;
mod error;
mod overrides;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser)]
#[command(name = "sleepformer", version, about = "Pediatric sleep staging from seven-channel EEG")]
struct Cli {
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    runs_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct StoreArgs {
    /// Epoch container (`.ssep`); subjects are read from `<stem>.subjects.jsonl` when present.
    #[arg(long)]
    pub store: PathBuf,
    /// Patient split file (`key<TAB>split` lines).
    #[arg(long)]
    pub splits: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Run configuration JSON; unspecified fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` on a dotted path, e.g. `model.blocks=4`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Replaces the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Convert a directory of EDF studies into an epoch container.
    Ingest {
        #[arg(long)]
        edf_dir: PathBuf,
        /// Subject sidecar: one JSON object per line.
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Parallel file workers (defaults to the available cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Generate a synthetic labelled store.
    Synth {
        #[arg(long, default_value_t = 500)]
        n_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        patients: usize,
        #[arg(long, default_value_t = 0.0)]
        snr_db: f64,
        /// Put the class rhythm on this montage channel only.
        #[arg(long)]
        planted_channel: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign patients to train/val/test.
    Split {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train, val and test fractions.
        #[arg(long, default_value = "0.7,0.1,0.2")]
        fractions: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: StoreArgs,
    },
    /// Continue training from a checkpoint saved by `train`.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the configuration stored in the checkpoint.
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: StoreArgs,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: StoreArgs,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Retrain on single channels and tabulate per-stage test accuracy.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: StoreArgs,
        /// Montage channel; repeatable. All seven when omitted.
        #[arg(long)]
        channel: Vec<String>,
    },
    /// Per-epoch predictions as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: StoreArgs,
        /// Restrict to one split (requires --splits).
        #[arg(long)]
        split: Option<String>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Penultimate-layer features as CSV.
    ExportFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: StoreArgs,
        #[arg(long, default_value = "test")]
        split: String,
        /// Seeded subsample of this many epochs.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// True and predicted hypnogram of one patient as CSV and SVG.
    ExportHypnogram {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: StoreArgs,
        #[arg(long)]
        patient: String,
    },
    /// Summarize a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(&cli.runs_dir, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { kind, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(kind as u8)
        }
    }
}
