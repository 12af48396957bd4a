use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sleepformer_autodiff::{AdamConfig, AdamState, Tape, Tensor};

use super::log::{BestPointer, EvalRecord, TrainLog, ValMetrics};
use super::{RunConfig, TrainError};
use crate::dataset::{assemble, pass_order, EpochStore, Split};
use crate::eval::{metrics, predict_split};
use crate::model::{forward, load_checkpoint, save_checkpoint, Checkpoint, ModelParams, ParamVars};

pub const BEST_CHECKPOINT: &str = "best.ssck";
pub const LAST_CHECKPOINT: &str = "last.ssck";
pub const DIVERGED_CHECKPOINT: &str = "diverged.ssck";
pub const LOG_FILE: &str = "train_log.jsonl";

/// Everything beyond the parameters needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ResumeState {
    iteration: usize,
    adam_t: u64,
    run: RunConfig,
    log: TrainLog,
    loss_sum: f64,
    loss_count: usize,
}

pub struct TrainOutcome {
    pub log: TrainLog,
    pub params: ModelParams<f32>,
    /// Parameters at the best validation score.
    pub best_params: ModelParams<f32>,
}

/// Adam on weighted cross-entropy with periodic validation.
///
/// Iteration `i` draws batch `i mod k` of pass `i div k` (k batches per
/// pass), so the data order depends only on the seed and the iteration.
pub struct Trainer {
    config: RunConfig,
    channels: Vec<usize>,
    params: ModelParams<f32>,
    adam: AdamState<f32>,
    iteration: usize,
    log: TrainLog,
    loss_sum: f64,
    loss_count: usize,
    best_params: Option<ModelParams<f32>>,
    order: Option<(u64, Vec<usize>)>,
    started: Instant,
}

fn adam_config(c: &RunConfig) -> AdamConfig {
    AdamConfig { lr: c.lr, ..AdamConfig::default() }
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let params = ModelParams::init(&config.model, config.seed)?;
        let adam = AdamState::new(adam_config(&config), params.tensors());
        let log = TrainLog { param_count: params.param_count(), ..Default::default() };
        Ok(Self {
            channels: config.channel_indices()?,
            config,
            params,
            adam,
            iteration: 0,
            log,
            loss_sum: 0.0,
            loss_count: 0,
            best_params: None,
            order: None,
            started: Instant::now(),
        })
    }

    /// Restores a run saved by [`Trainer::checkpoint`]. `config` may differ
    /// from the saved one only in `max_iterations` and `checkpoint_dir`.
    pub fn from_checkpoint(ck: Checkpoint, config: RunConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let state: ResumeState = serde_json::from_value(ck.state.clone())
            .map_err(|e| TrainError::CorruptCheckpoint(format!("checkpoint carries no resume state: {e}")))?;
        let diff = state.run.resume_diff(&config);
        if !diff.is_empty() {
            return Err(TrainError::ConfigMismatch(diff.join(", ")));
        }
        let mut adam = AdamState::new(adam_config(&config), ck.params.tensors());
        for (i, name) in ck.params.names().iter().enumerate() {
            for (slot, prefix) in [(&mut adam.m, "adam.m/"), (&mut adam.v, "adam.v/")] {
                let t = ck
                    .extra(&format!("{prefix}{name}"))
                    .ok_or_else(|| TrainError::CorruptCheckpoint(format!("missing optimizer tensor {prefix}{name}")))?;
                if t.shape() != slot[i].shape() {
                    return Err(TrainError::CorruptCheckpoint(format!(
                        "optimizer tensor {prefix}{name} has shape {:?}",
                        t.shape()
                    )));
                }
                slot[i] = t.clone();
            }
        }
        adam.t = state.adam_t;
        let best_params = match ck.extra.iter().any(|(n, _)| n.starts_with("best/")) {
            true => {
                let named = ck
                    .params
                    .names()
                    .iter()
                    .map(|n| {
                        ck.extra(&format!("best/{n}"))
                            .cloned()
                            .map(|t| (n.clone(), t))
                            .ok_or_else(|| TrainError::CorruptCheckpoint(format!("missing best/{n}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some(ModelParams::from_named(&config.model, named)?)
            }
            false => None,
        };
        Ok(Self {
            channels: config.channel_indices()?,
            config,
            params: ck.params,
            adam,
            iteration: state.iteration,
            log: state.log,
            loss_sum: state.loss_sum,
            loss_count: state.loss_count,
            best_params,
            order: None,
            started: Instant::now(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// Parameters, optimizer moments, the best parameters so far and the
    /// run state, as one checkpoint.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.params.clone());
        for (prefix, moments) in [("adam.m/", &self.adam.m), ("adam.v/", &self.adam.v)] {
            for (name, t) in self.params.names().iter().zip(moments) {
                ck.extra.push((format!("{prefix}{name}"), t.clone()));
            }
        }
        if let Some(best) = &self.best_params {
            for (name, t) in best.named() {
                ck.extra.push((format!("best/{name}"), t.clone()));
            }
        }
        let state = ResumeState {
            iteration: self.iteration,
            adam_t: self.adam.t,
            run: self.stored_config(),
            log: self.log.clone(),
            loss_sum: self.loss_sum,
            loss_count: self.loss_count,
        };
        ck.state = serde_json::to_value(state).expect("state serializes");
        ck
    }

    /// The run configuration as saved in checkpoints, without the
    /// machine-specific checkpoint directory.
    fn stored_config(&self) -> RunConfig {
        RunConfig { checkpoint_dir: None, ..self.config.clone() }
    }

    fn batch_indices(&mut self, store: &EpochStore) -> Vec<usize> {
        let n = store.indices(Split::Train).len();
        let b = self.config.batch_size;
        let per_pass = if self.config.drop_last { n / b } else { n.div_ceil(b) }.max(1);
        let pass = (self.iteration / per_pass) as u64;
        let pos = self.iteration % per_pass;
        if self.order.as_ref().is_none_or(|(p, _)| *p != pass) {
            self.order = Some((pass, pass_order(store, Split::Train, self.config.seed, pass)));
        }
        let order = &self.order.as_ref().expect("order cached").1;
        order[pos * b..((pos + 1) * b).min(order.len())].to_vec()
    }

    /// One optimizer step; returns the batch loss.
    pub fn step(&mut self, store: &EpochStore) -> Result<f64, TrainError> {
        let idx = self.batch_indices(store);
        let batch = assemble(store, &idx, &self.config.loss_weights.0, &self.channels);
        let tape = Tape::new();
        let vars = ParamVars::register(&tape, &self.params);
        let out = forward(&tape, &vars, tape.constant(batch.inputs))?;
        let loss = out.logits.weighted_cross_entropy(&batch.labels, &batch.weights)?;
        let value = loss.value().item() as f64;
        if !value.is_finite() {
            let dump = self.dump_diverged();
            return Err(TrainError::DivergedLoss { iteration: self.iteration, loss: value, dump });
        }
        let mut grads = loss.backward()?;
        let grads: Vec<Tensor<f32>> = vars
            .vars()
            .iter()
            .zip(self.params.tensors())
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        drop(vars);
        self.adam.step(self.params.tensors_mut(), &grads)?;
        self.iteration += 1;
        self.loss_sum += value;
        self.loss_count += 1;
        Ok(value)
    }

    fn dump_diverged(&self) -> Option<PathBuf> {
        let dir = self.config.checkpoint_dir.as_ref()?;
        let path = dir.join(DIVERGED_CHECKPOINT);
        save_checkpoint(&path, &self.checkpoint()).ok().map(|_| path)
    }

    fn validate_now(&mut self, store: &EpochStore) -> Result<(), TrainError> {
        let (preds, truth) = predict_split(&self.params, store, Split::Val, &self.channels, self.config.batch_size)?;
        let m = metrics(&crate::eval::confusion(&preds, &truth)?)?;
        let val = ValMetrics { accuracy: m.accuracy, weighted_f1: m.weighted_f1, macro_f1: m.macro_f1, kappa: m.kappa };
        let score = val.score(self.config.metric_for_checkpoint);
        let train_loss = if self.loss_count == 0 { f64::NAN } else { self.loss_sum / self.loss_count as f64 };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        let wall_time = (!self.config.deterministic).then(|| self.started.elapsed().as_secs_f64());
        self.log.records.push(EvalRecord { iteration: self.iteration, train_loss, val, wall_time });
        if self.log.best.as_ref().is_none_or(|b| score > b.metric) {
            let checkpoint = match &self.config.checkpoint_dir {
                Some(dir) => {
                    let mut best = Checkpoint::new(self.params.clone());
                    best.state = serde_json::json!({ "iteration": self.iteration, "run": self.stored_config() });
                    save_checkpoint(&dir.join(BEST_CHECKPOINT), &best)?;
                    Some(BEST_CHECKPOINT.to_string())
                }
                None => None,
            };
            self.log.best = Some(BestPointer { iteration: self.iteration, metric: score, checkpoint });
            self.best_params = Some(self.params.clone());
        }
        if let Some(dir) = &self.config.checkpoint_dir {
            save_checkpoint(&dir.join(LAST_CHECKPOINT), &self.checkpoint())?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(LOG_FILE))?);
            self.log.write_jsonl(&mut f)?;
        }
        Ok(())
    }

    /// Trains until `max_iterations`, validating on schedule.
    pub fn run(&mut self, store: &EpochStore) -> Result<&TrainLog, TrainError> {
        for split in [Split::Train, Split::Val] {
            if store.indices(split).is_empty() {
                return Err(TrainError::EmptySplit(split));
            }
        }
        if self.config.drop_last && store.indices(Split::Train).len() < self.config.batch_size {
            return Err(TrainError::EmptySplit(Split::Train));
        }
        if let Some(dir) = &self.config.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
        }
        while self.iteration < self.config.max_iterations {
            self.step(store)?;
            if self.iteration.is_multiple_of(self.config.eval_every) || self.iteration == self.config.max_iterations {
                self.validate_now(store)?;
            }
        }
        Ok(&self.log)
    }

    pub fn into_outcome(self) -> TrainOutcome {
        let best_params = self.best_params.unwrap_or_else(|| self.params.clone());
        TrainOutcome { log: self.log, params: self.params, best_params }
    }
}

/// Run configuration stored in a trainer checkpoint (`best` or `last`).
pub fn checkpoint_run_config(ck: &Checkpoint) -> Option<RunConfig> {
    serde_json::from_value(ck.state.get("run")?.clone()).ok()
}

pub fn train(config: RunConfig, store: &EpochStore) -> Result<TrainOutcome, TrainError> {
    let mut t = Trainer::new(config)?;
    t.run(store)?;
    Ok(t.into_outcome())
}

/// Continues the run saved at `checkpoint` up to `config.max_iterations`.
pub fn resume(checkpoint: &Path, config: RunConfig, store: &EpochStore) -> Result<TrainOutcome, TrainError> {
    let ck =
        load_checkpoint(checkpoint, Some(&config.model)).map_err(|e| TrainError::CorruptCheckpoint(e.to_string()))?;
    let mut t = Trainer::from_checkpoint(ck, config)?;
    t.run(store)?;
    Ok(t.into_outcome())
}
