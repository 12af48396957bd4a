use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sleepformer_autodiff::{Real, Tensor};

use super::{ModelConfig, ModelError};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Weight,
    Zero,
    One,
}

/// Names, shapes and initializers of every learnable tensor, in a fixed order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, dh, h) = (cfg.model_dim, cfg.head_dim, cfg.heads);
    let mut v: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let dense = |v: &mut Vec<_>, name: &str, i: usize, o: usize| {
        v.push((format!("{name}.w"), vec![i, o], Init::Weight));
        v.push((format!("{name}.b"), vec![o], Init::Zero));
    };
    let norm = |v: &mut Vec<(String, Vec<usize>, Init)>, name: &str| {
        if cfg.affine_norm {
            v.push((format!("{name}.g"), vec![d], Init::One));
            v.push((format!("{name}.b"), vec![d], Init::Zero));
        }
    };
    dense(&mut v, "patch", cfg.patch_width(), d);
    v.push(("pos".into(), vec![cfg.tokens(), d], Init::Zero));
    for b in 0..cfg.blocks {
        norm(&mut v, &format!("block{b}.ln1"));
        for head in 0..h {
            for proj in ["q", "k", "v"] {
                dense(&mut v, &format!("block{b}.head{head}.{proj}"), d, dh);
            }
        }
        dense(&mut v, &format!("block{b}.attn.o"), h * dh, d);
        norm(&mut v, &format!("block{b}.ln2"));
        dense(&mut v, &format!("block{b}.mlp.fc1"), d, cfg.mlp_hidden);
        dense(&mut v, &format!("block{b}.mlp.fc2"), cfg.mlp_hidden, d);
    }
    if cfg.final_norm {
        norm(&mut v, "final_ln");
    }
    if cfg.feature_head {
        dense(&mut v, "feature", d, cfg.feature_dim);
    }
    dense(&mut v, "classifier", cfg.classifier_in(), cfg.classes);
    v
}

pub(super) fn layout_len(cfg: &ModelConfig) -> usize {
    layout(cfg).len()
}

/// Scalar count of all learnable tensors a configuration creates.
pub fn param_count_for(cfg: &ModelConfig) -> usize {
    layout(cfg).iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
}

/// All learnable tensors of one network, in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ModelParams<T> {
    /// Seeded initialization: truncated normal (σ = 0.02, redrawn beyond 2σ)
    /// for weight matrices, zeros for biases and the positional table, ones
    /// for normalization gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(config) {
            let t = match init {
                Init::Zero => Tensor::zeros(&shape),
                Init::One => Tensor::ones(&shape),
                Init::Weight => Tensor::from_fn(&shape, |_| T::of(truncated_normal(&mut rng) * INIT_STD)),
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(Self::assemble(config.clone(), names, tensors))
    }

    fn assemble(config: ModelConfig, names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { config, names, tensors, index }
    }

    /// Builds parameters from named tensors, which must match the layout of
    /// `config` exactly (same names, same order, same shapes).
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self, ModelError> {
        config.validate()?;
        let want = layout(config);
        if want.len() != named.len() {
            return Err(ModelError::LayoutMismatch(format!("expected {} tensors, got {}", want.len(), named.len())));
        }
        for ((wn, ws, _), (n, t)) in want.iter().zip(&named) {
            if wn != n || ws[..] != *t.shape() {
                return Err(ModelError::LayoutMismatch(format!("expected {wn} {ws:?}, got {n} {:?}", t.shape())));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self::assemble(config.clone(), names, tensors))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams::assemble(self.config.clone(), self.names.clone(), self.tensors.iter().map(Tensor::cast).collect())
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}
