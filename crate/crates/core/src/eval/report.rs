use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{confusion, metrics, ConfusionMatrix, Metrics};
use super::EvalError;
use crate::subject::SubjectMeta;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub total: u64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    /// Row-normalized matrix in percent.
    pub confusion_percent: [[f64; 5]; 5],
    #[serde(flatten)]
    pub metrics: Metrics,
    /// `"age"`, `"race"`, `"sex"` → bucket label → sub-report.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub strata: BTreeMap<String, BTreeMap<String, StratumReport>>,
}

impl EvalReport {
    pub fn from_predictions(preds: &[usize], truth: &[usize]) -> Result<Self, EvalError> {
        let cm = confusion(preds, truth)?;
        Self::from_confusion(cm)
    }

    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self, EvalError> {
        let metrics = metrics(&cm)?;
        Ok(Self { confusion_percent: cm.row_normalized(), confusion: cm, metrics, strata: BTreeMap::new() })
    }
}

/// Global report plus per-age-bucket, race and sex sub-reports.
pub fn stratified_eval(
    preds: &[usize],
    truth: &[usize],
    meta: &[Option<&SubjectMeta>],
) -> Result<EvalReport, EvalError> {
    let mut report = EvalReport::from_predictions(preds, truth)?;
    if meta.len() != truth.len() {
        return Err(EvalError::LengthMismatch { preds: meta.len(), truth: truth.len() });
    }
    let mut groups: BTreeMap<(&str, String), ConfusionMatrix> = BTreeMap::new();
    for (i, m) in meta.iter().enumerate() {
        let m = m.ok_or(EvalError::MissingMeta(i))?;
        for key in [("age", m.age_bucket()), ("race", m.race.label().to_string()), ("sex", m.sex.label().to_string())] {
            groups.entry(key).or_default().add(truth[i], preds[i]);
        }
    }
    for ((axis, bucket), cm) in groups {
        let m = metrics(&cm)?;
        report.strata.entry(axis.to_string()).or_default().insert(
            bucket,
            StratumReport { total: m.total, accuracy: m.accuracy, weighted_f1: m.weighted_f1, confusion: cm },
        );
    }
    Ok(report)
}
