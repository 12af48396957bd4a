use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::percent_1dp;
use super::{confusion, metrics, predict_split, EvalError};
use crate::dataset::{EpochStore, Split};
use crate::montage::{montage_index, MONTAGE};
use crate::stage::{Stage, NUM_STAGES};
use crate::training::{train, RunConfig};

/// Test-split accuracy of a model trained on one montage channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub channel: String,
    /// Recall of each stage, W through REM.
    pub per_stage_accuracy: [f64; NUM_STAGES],
    pub overall_accuracy: f64,
}

/// Trains `base` restricted to a single input channel and scores the best
/// checkpoint on the test split.
pub fn channel_ablation(base: &RunConfig, store: &EpochStore, channel: &str) -> Result<AblationRow, EvalError> {
    let idx = montage_index(channel).ok_or_else(|| EvalError::UnknownChannel(channel.to_string()))?;
    let label = MONTAGE[idx];
    let mut cfg = base.clone();
    cfg.input_channels = vec![label.to_string()];
    cfg.model.channels = 1;
    cfg.checkpoint_dir = base.checkpoint_dir.as_ref().map(|d| d.join(label));
    let outcome = train(cfg, store).map_err(|e| EvalError::Training(Box::new(e)))?;
    let (preds, truth) = predict_split(&outcome.best_params, store, Split::Test, &[idx], base.batch_size)?;
    let m = metrics(&confusion(&preds, &truth)?)?;
    Ok(AblationRow {
        channel: label.to_string(),
        per_stage_accuracy: std::array::from_fn(|k| m.per_class[k].recall),
        overall_accuracy: m.accuracy,
    })
}

/// Rows as percentages with one decimal: `channel,W,N1,N2,N3,REM,overall`.
pub fn write_ablation_csv(mut w: impl Write, rows: &[AblationRow]) -> std::io::Result<()> {
    let names: Vec<&str> = Stage::ALL.iter().map(|s| s.short_name()).collect();
    writeln!(w, "channel,{},overall", names.join(","))?;
    for r in rows {
        let cells: Vec<String> = r.per_stage_accuracy.iter().map(|a| format!("{:.1}", percent_1dp(*a))).collect();
        writeln!(w, "{},{},{:.1}", r.channel, cells.join(","), percent_1dp(r.overall_accuracy))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let rows = vec![AblationRow {
            channel: "F4-M1".into(),
            per_stage_accuracy: [0.9, 0.5, 0.75, 0.8, 0.78],
            overall_accuracy: 0.757,
        }];
        let mut buf = Vec::new();
        write_ablation_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "channel,W,N1,N2,N3,REM,overall\nF4-M1,90.0,50.0,75.0,80.0,78.0,75.7\n"
        );
    }

    #[test]
    fn unknown_channel() {
        let r = channel_ablation(&RunConfig::default(), &EpochStore::default(), "T3-A2");
        assert!(matches!(r, Err(EvalError::UnknownChannel(_))));
    }
}
