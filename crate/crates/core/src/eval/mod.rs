//! Scoring: confusion matrices, agreement metrics, stratified reports,
//! single-channel ablation, and hypnogram and feature exports.

mod ablation;
mod export;
mod metrics;
mod report;

pub use ablation::{channel_ablation, write_ablation_csv, AblationRow};
pub use export::{
    hypnogram_svg, read_hypnogram_csv, subsample, write_confusion_csv, write_features_csv, write_hypnogram_csv,
    HypnogramRow, HYPNOGRAM_HEADER,
};
pub use metrics::{confusion, metrics, percent_1dp, ClassMetrics, ConfusionMatrix, Metrics};
pub use report::{stratified_eval, EvalReport, StratumReport};

use crate::dataset::{assemble, EpochStore, Split};
use crate::model::{argmax_rows, predict, ModelError, ModelParams};
use crate::stage::{Stage, NUM_STAGES};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{preds} predictions for {truth} labels")]
    LengthMismatch { preds: usize, truth: usize },
    #[error("label {0} is not a stage index")]
    BadLabel(usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("epoch {0} has no subject metadata")]
    MissingMeta(usize),
    #[error("unknown montage channel `{0}`")]
    UnknownChannel(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training failed: {0}")]
    Training(Box<crate::training::TrainError>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Model outputs for a list of store epochs.
#[derive(Clone, Debug, Default)]
pub struct Predictions {
    pub indices: Vec<usize>,
    pub preds: Vec<usize>,
    pub truth: Vec<usize>,
    pub features: Vec<Vec<f32>>,
}

/// Runs inference over `indices` in chunks of `batch_size`.
pub fn predict_indices(
    params: &ModelParams<f32>,
    store: &EpochStore,
    indices: &[usize],
    channels: &[usize],
    batch_size: usize,
) -> Result<Predictions, EvalError> {
    let mut out = Predictions::default();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = assemble(store, chunk, &[1.0; NUM_STAGES], channels);
        let (logits, features) = predict(params, &batch.inputs)?;
        out.preds.extend(argmax_rows(&logits));
        out.truth.extend(batch.labels);
        let d = features.shape()[1];
        out.features.extend(features.data().chunks(d).map(<[f32]>::to_vec));
        out.indices.extend_from_slice(chunk);
    }
    Ok(out)
}

/// Predicted and true labels over a split, in store order.
pub fn predict_split(
    params: &ModelParams<f32>,
    store: &EpochStore,
    split: Split,
    channels: &[usize],
    batch_size: usize,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    let p = predict_indices(params, store, store.indices(split), channels, batch_size)?;
    Ok((p.preds, p.truth))
}

/// Report over a split; stratified when every epoch's patient has subject
/// metadata, global only otherwise.
pub fn evaluate_split(
    params: &ModelParams<f32>,
    store: &EpochStore,
    split: Split,
    channels: &[usize],
    batch_size: usize,
) -> Result<EvalReport, EvalError> {
    let p = predict_indices(params, store, store.indices(split), channels, batch_size)?;
    let meta: Vec<Option<&crate::subject::SubjectMeta>> =
        p.indices.iter().map(|&i| store.subject(&store.epoch(i).patient_key)).collect();
    if meta.iter().all(Option::is_some) {
        stratified_eval(&p.preds, &p.truth, &meta)
    } else {
        EvalReport::from_predictions(&p.preds, &p.truth)
    }
}

/// Penultimate-layer features of a split, optionally a seeded subsample of
/// `limit` epochs.
pub fn export_features(
    params: &ModelParams<f32>,
    store: &EpochStore,
    split: Split,
    channels: &[usize],
    limit: Option<usize>,
    seed: u64,
) -> Result<Vec<(Vec<f32>, Stage)>, EvalError> {
    let all = store.indices(split);
    let picked: Vec<usize> = match limit {
        Some(k) => subsample(all.len(), k, seed).into_iter().map(|i| all[i]).collect(),
        None => all.to_vec(),
    };
    let p = predict_indices(params, store, &picked, channels, 64)?;
    Ok(p.features.into_iter().zip(p.truth).map(|(f, t)| (f, Stage::from_index(t).expect("stored label"))).collect())
}
