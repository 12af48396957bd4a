use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters. Defaults give the reference network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub seconds_per_epoch: usize,
    pub sample_rate_hz: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub model_dim: usize,
    /// Width of each attention head's query, key and value.
    pub head_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_hidden: usize,
    pub feature_dim: usize,
    pub classes: usize,
    /// Dense GELU layer `model_dim → feature_dim` after pooling.
    pub feature_head: bool,
    /// Layer normalization of the last block's output before pooling.
    pub final_norm: bool,
    /// Learned gain and bias in every layer normalization.
    pub affine_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seconds_per_epoch: 30,
            sample_rate_hz: 128,
            channels: 7,
            patch_size: 128,
            model_dim: 64,
            head_dim: 64,
            heads: 4,
            blocks: 8,
            mlp_hidden: 128,
            feature_dim: 128,
            classes: 5,
            feature_head: true,
            final_norm: true,
            affine_norm: true,
        }
    }
}

impl ModelConfig {
    /// Small network for fast tests: `d = 8`, two blocks, two heads of width 4.
    pub fn tiny() -> Self {
        Self { model_dim: 8, head_dim: 4, heads: 2, blocks: 2, mlp_hidden: 16, feature_dim: 16, ..Self::default() }
    }

    pub fn samples_per_epoch(&self) -> usize {
        self.seconds_per_epoch * self.sample_rate_hz
    }

    pub fn tokens(&self) -> usize {
        self.samples_per_epoch() / self.patch_size.max(1)
    }

    pub fn patch_width(&self) -> usize {
        self.patch_size * self.channels
    }

    /// Width of the vector fed to the classifier.
    pub fn classifier_in(&self) -> usize {
        if self.feature_head {
            self.feature_dim
        } else {
            self.model_dim
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("seconds_per_epoch", self.seconds_per_epoch),
            ("sample_rate_hz", self.sample_rate_hz),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("model_dim", self.model_dim),
            ("head_dim", self.head_dim),
            ("heads", self.heads),
            ("mlp_hidden", self.mlp_hidden),
            ("feature_dim", self.feature_dim),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::BadConfig(format!("{name} must be positive")));
        }
        if !self.samples_per_epoch().is_multiple_of(self.patch_size) {
            return Err(ModelError::BadConfig(format!(
                "patch_size {} does not divide {} samples per epoch",
                self.patch_size,
                self.samples_per_epoch()
            )));
        }
        Ok(())
    }

    /// Field-by-field differences, `name: self -> other`.
    pub fn diff(&self, other: &ModelConfig) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        let (a, b) = (a.as_object().expect("object"), b.as_object().expect("object"));
        a.iter().filter(|(k, v)| b.get(*k) != Some(*v)).map(|(k, v)| format!("{k}: {v} -> {}", b[k])).collect()
    }
}
