use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::TrainError;
use crate::model::ModelConfig;
use crate::montage::montage_index;
use crate::stage::NUM_STAGES;

/// Per-class loss weights in stage order W, N1, N2, N3, REM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossWeights(pub [f64; NUM_STAGES]);

impl Default for LossWeights {
    fn default() -> Self {
        Self([0.9, 5.0, 0.9, 0.9, 0.9])
    }
}

impl LossWeights {
    pub fn uniform() -> Self {
        Self([1.0; NUM_STAGES])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMetric {
    #[default]
    Accuracy,
    WeightedF1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// Validation runs after every `eval_every` iterations and after the last.
    pub eval_every: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub checkpoint_dir: Option<PathBuf>,
    pub metric_for_checkpoint: CheckpointMetric,
    pub model: ModelConfig,
    /// Montage labels fed to the model, in order; all seven when empty.
    pub input_channels: Vec<String>,
    pub drop_last: bool,
    /// Omit wall-clock times from the log so identical runs log identically.
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            max_iterations: 1000,
            eval_every: 100,
            seed: 0,
            loss_weights: LossWeights::default(),
            checkpoint_dir: None,
            metric_for_checkpoint: CheckpointMetric::Accuracy,
            model: ModelConfig::default(),
            input_channels: Vec::new(),
            drop_last: false,
            deterministic: true,
        }
    }
}

/// Fields that may change between a run and its resumption.
const RESUMABLE_FIELDS: [&str; 2] = ["max_iterations", "checkpoint_dir"];

impl RunConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |key: &str, msg: String| Err(TrainError::Config { key: key.into(), message: msg });
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        for (key, v) in
            [("batch_size", self.batch_size), ("max_iterations", self.max_iterations), ("eval_every", self.eval_every)]
        {
            if v == 0 {
                return bad(key, "must be positive".into());
            }
        }
        if let Some(i) = self.loss_weights.0.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return bad(&format!("loss_weights.{i}"), format!("must be positive, got {}", self.loss_weights.0[i]));
        }
        let chans = self.channel_indices()?;
        if chans.len() != self.model.channels {
            return bad(
                "model.channels",
                format!("{} but {} input channels are selected", self.model.channels, chans.len()),
            );
        }
        self.model.validate().map_err(|e| TrainError::Config { key: "model".into(), message: e.to_string() })
    }

    /// Montage indices of `input_channels` (all seven when empty).
    pub fn channel_indices(&self) -> Result<Vec<usize>, TrainError> {
        if self.input_channels.is_empty() {
            return Ok((0..crate::epoch::NUM_CHANNELS).collect());
        }
        self.input_channels
            .iter()
            .map(|l| montage_index(l).ok_or_else(|| TrainError::UnknownChannel(l.clone())))
            .collect()
    }

    /// Differences outside the resumable fields, `key: self -> other`.
    pub fn resume_diff(&self, other: &RunConfig) -> Vec<String> {
        let strip = |c: &RunConfig| {
            let mut v = serde_json::to_value(c).expect("config serializes");
            let o = v.as_object_mut().expect("object");
            for k in RESUMABLE_FIELDS {
                o.remove(k);
            }
            v
        };
        let mut out = Vec::new();
        flat_diff("", &strip(self), &strip(other), &mut out);
        out
    }
}

fn flat_diff(prefix: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, va) in x {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flat_diff(&key, va, y.get(k).unwrap_or(&Value::Null), out);
            }
        }
        _ if a != b => out.push(format!("{prefix}: {a} -> {b}")),
        _ => {}
    }
}
