//! The patch transformer: configuration, parameters, forward pass and
//! checkpoint files.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use forward::{
    argmax_rows, attention, encoder_block, forward, multi_head_attention, patchify, predict, unpatchify, ForwardOut,
    ParamVars,
};
pub use params::{param_count_for, ModelParams, INIT_STD};

use sleepformer_autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("shape law violated at {0}")]
    Shape(String),
    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
