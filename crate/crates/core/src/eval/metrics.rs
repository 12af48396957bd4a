use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::stage::{Stage, NUM_STAGES};

/// Counts with rows = true stage, columns = predicted stage.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_STAGES]; NUM_STAGES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_STAGES).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }

    /// Each row as percentages of its true-stage total (zero rows stay zero).
    pub fn row_normalized(&self) -> [[f64; NUM_STAGES]; NUM_STAGES] {
        std::array::from_fn(|i| {
            let s = self.row_sum(i);
            std::array::from_fn(|j| if s == 0 { 0.0 } else { 100.0 * self.counts[i][j] as f64 / s as f64 })
        })
    }
}

pub fn confusion(preds: &[usize], truth: &[usize]) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != truth.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), truth: truth.len() });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truth) {
        if let Some(&bad) = [p, t].iter().find(|&&l| l >= NUM_STAGES) {
            return Err(EvalError::BadLabel(bad));
        }
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub stage: Stage,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when the score was 0/0 and reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub kappa: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Scores derived from a confusion matrix. Division by zero yields 0 and sets
/// the matching `*_undefined` flag. Kappa is 1 when chance agreement is 1.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let n = total as f64;
    let per_class: Vec<ClassMetrics> = Stage::ALL
        .iter()
        .map(|&stage| {
            let k = stage.index();
            let tp = cm.counts[k][k];
            let (precision, pu) = ratio(tp, cm.col_sum(k));
            let (recall, ru) = ratio(tp, cm.row_sum(k));
            let (f1, fu) = if precision + recall == 0.0 {
                (0.0, true)
            } else {
                (2.0 * precision * recall / (precision + recall), false)
            };
            ClassMetrics {
                stage,
                precision,
                recall,
                f1,
                support: cm.row_sum(k),
                precision_undefined: pu,
                recall_undefined: ru,
                f1_undefined: fu,
            }
        })
        .collect();
    let weighted = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / n;
    let p_o = cm.trace() as f64 / n;
    let p_e = (0..NUM_STAGES).map(|k| cm.row_sum(k) as f64 * cm.col_sum(k) as f64).sum::<f64>() / (n * n);
    let kappa = if p_e == 1.0 { 1.0 } else { (p_o - p_e) / (1.0 - p_e) };
    Ok(Metrics {
        total,
        accuracy: p_o,
        macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / NUM_STAGES as f64,
        weighted_f1: weighted(|c| c.f1),
        weighted_precision: weighted(|c| c.precision),
        weighted_recall: weighted(|c| c.recall),
        kappa,
        per_class,
    })
}

/// `x` as a percentage with one decimal, ties to even.
pub fn percent_1dp(x: f64) -> f64 {
    (x * 1000.0).round_ties_even() / 10.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_diagonal() {
        let cm = confusion(&[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4]).unwrap();
        for k in 0..5 {
            assert_eq!(cm.counts[k][k], 1);
        }
        let m = metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.macro_f1, m.weighted_f1, m.kappa), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn off_diagonal_cell() {
        let cm = confusion(&[2, 2], &[1, 1]).unwrap();
        assert_eq!(cm.counts[1][2], 2);
        assert_eq!(cm.total(), 2);
        let m = metrics(&cm).unwrap();
        assert!(m.per_class[1].precision_undefined);
        assert!(!m.per_class[1].recall_undefined);
        assert_eq!(m.per_class[1].recall, 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(confusion(&[0], &[]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(confusion(&[5], &[0]), Err(EvalError::BadLabel(5))));
        assert!(matches!(metrics(&ConfusionMatrix::default()), Err(EvalError::EmptyMatrix)));
    }

    #[test]
    fn single_class_is_perfect_agreement() {
        let m = metrics(&confusion(&[3, 3], &[3, 3]).unwrap()).unwrap();
        assert_eq!(m.kappa, 1.0);
    }

    #[test]
    fn rounding() {
        assert_eq!(percent_1dp(0.78249), 78.2);
        assert_eq!(percent_1dp(0.70500), 70.5);
        assert_eq!(percent_1dp(0.00125), 0.1);
        assert_eq!(percent_1dp(0.00375), 0.4);
    }

    #[test]
    fn row_normalized_rows_sum_to_100() {
        let cm = confusion(&[0, 1, 1, 2], &[0, 0, 1, 1]).unwrap();
        let r = cm.row_normalized();
        assert_eq!(r[0][0] + r[0][1], 100.0);
        assert_eq!(r[4], [0.0; 5]);
    }
}
