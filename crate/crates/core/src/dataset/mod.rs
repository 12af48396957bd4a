//! Cohort handling: patient splits, the epoch store and its container
//! format, minibatching, and a synthetic generator.

mod batch;
mod container;
pub mod rng;
mod split;
mod store;
mod synth;

pub use batch::{assemble, make_batches, pass_order, sequential_batches, Batch, BatchOptions, Batches};
pub use container::{read_container, write_container};
pub use split::{duration_stats, patient_split, read_split_file, write_split_file, DurationStats, Split, SplitSpec};
pub use store::EpochStore;
pub use synth::{synth_generate, synth_generate_with, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("invalid split fractions {0}: need three positive values summing to 1")]
    BadSplitSpec(String),
    #[error("patient `{0}` has no split assignment")]
    UnassignedPatient(String),
    #[error("invalid synthetic configuration: {0}")]
    BadSynthConfig(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("corrupt epoch container: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
