//! Weighted cross-entropy training with Adam, validation-driven
//! checkpointing and exact resumption.

mod config;
mod log;
mod trainer;

pub use config::{CheckpointMetric, LossWeights, RunConfig};
pub use log::{best_record, BestPointer, EvalRecord, TrainLog, ValMetrics};
pub use trainer::{
    checkpoint_run_config, resume, train, TrainOutcome, Trainer, BEST_CHECKPOINT, DIVERGED_CHECKPOINT, LAST_CHECKPOINT,
    LOG_FILE,
};

use std::path::PathBuf;

use sleepformer_autodiff::AutodiffError;

use crate::dataset::Split;
use crate::eval::EvalError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("unknown montage channel `{0}`")]
    UnknownChannel(String),
    #[error("the {0} split is empty")]
    EmptySplit(Split),
    #[error("loss became {loss} at iteration {iteration}{}", .dump.as_ref().map(|p| format!("; state saved to {}", p.display())).unwrap_or_default())]
    DivergedLoss { iteration: usize, loss: f64, dump: Option<PathBuf> },
    #[error("run configuration differs from the checkpoint: {0}")]
    ConfigMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("train log: {0}")]
    Log(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
