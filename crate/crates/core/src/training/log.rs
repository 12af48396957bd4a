use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{CheckpointMetric, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    /// Mean training loss since the previous record.
    pub train_loss: f64,
    pub val: ValMetrics,
    /// Seconds since the run started; `None` in deterministic mode.
    pub wall_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestPointer {
    pub iteration: usize,
    pub metric: f64,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub param_count: usize,
    pub records: Vec<EvalRecord>,
    pub best: Option<BestPointer>,
}

impl ValMetrics {
    pub fn score(&self, metric: CheckpointMetric) -> f64 {
        match metric {
            CheckpointMetric::Accuracy => self.accuracy,
            CheckpointMetric::WeightedF1 => self.weighted_f1,
        }
    }
}

/// The earliest record with the highest validation score.
pub fn best_record(records: &[EvalRecord], metric: CheckpointMetric) -> Option<&EvalRecord> {
    records.iter().fold(None, |best: Option<&EvalRecord>, r| match best {
        Some(b) if b.val.score(metric) >= r.val.score(metric) => Some(b),
        _ => Some(r),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Start { param_count: usize },
    Eval(EvalRecord),
    Best(BestPointer),
}

impl TrainLog {
    /// One JSON object per line: a `start` line, one `eval` line per record,
    /// then a `best` line when a best checkpoint exists.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), TrainError> {
        let mut line = |l: &Line| -> Result<(), TrainError> {
            serde_json::to_writer(&mut w, l).map_err(|e| TrainError::Log(e.to_string()))?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&Line::Start { param_count: self.param_count })?;
        for r in &self.records {
            line(&Line::Eval(r.clone()))?;
        }
        if let Some(b) = &self.best {
            line(&Line::Best(b.clone()))?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, TrainError> {
        let mut log = TrainLog::default();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| TrainError::Log(format!("line {}: {e}", n + 1)))? {
                Line::Start { param_count } => log.param_count = param_count,
                Line::Eval(r) => log.records.push(r),
                Line::Best(b) => log.best = Some(b),
            }
        }
        Ok(log)
    }
}
