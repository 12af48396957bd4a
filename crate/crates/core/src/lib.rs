//! Pediatric sleep staging from multi-channel EEG.

pub mod dataset;
pub mod edf;
pub mod epoch;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod montage;
pub mod resample;
pub mod stage;
pub mod subject;
pub mod training;
