//! Independent reference computations shared by test targets.
#![allow(dead_code)]

use sleepformer::eval::ConfusionMatrix;

pub struct Oracle {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub kappa: f64,
}

/// Scores computed from the expanded list of (truth, prediction) pairs.
pub fn oracle(pairs: &[(usize, usize)]) -> Oracle {
    let n = pairs.len() as f64;
    let count = |f: &dyn Fn(&(usize, usize)) -> bool| pairs.iter().filter(|p| f(p)).count() as f64;
    let accuracy = count(&|&(t, p)| t == p) / n;
    let mut precision = vec![];
    let mut recall = vec![];
    let mut f1 = vec![];
    let mut support = vec![];
    let mut chance = 0.0;
    for k in 0..5 {
        let tp = count(&|&(t, p)| t == k && p == k);
        let predicted = count(&|&(_, p)| p == k);
        let actual = count(&|&(t, _)| t == k);
        let pr = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let re = if actual > 0.0 { tp / actual } else { 0.0 };
        precision.push(pr);
        recall.push(re);
        f1.push(if pr + re > 0.0 { 2.0 * pr * re / (pr + re) } else { 0.0 });
        support.push(actual);
        chance += (actual / n) * (predicted / n);
    }
    let kappa = if chance == 1.0 { 1.0 } else { (accuracy - chance) / (1.0 - chance) };
    Oracle {
        accuracy,
        macro_f1: f1.iter().sum::<f64>() / 5.0,
        weighted_f1: f1.iter().zip(&support).map(|(f, s)| f * s).sum::<f64>() / n,
        precision,
        recall,
        f1,
        kappa,
    }
}

pub fn expand(cm: &ConfusionMatrix) -> Vec<(usize, usize)> {
    let mut out = vec![];
    for t in 0..5 {
        for p in 0..5 {
            out.extend(std::iter::repeat_n((t, p), cm.counts[t][p] as usize));
        }
    }
    out
}

pub mod fd {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use sleepformer_autodiff::{AutodiffError, Tape, Tensor, Var};

    pub const STEP: f64 = 1e-5;
    /// Relative-error denominator floor, so near-zero gradients compare on an absolute scale.
    pub const FLOOR: f64 = 1e-4;

    pub fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
    }

    pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.5..1.5))
    }

    /// Largest relative error between the analytic gradient of
    /// `sum(f(inputs) ⊙ r)` and central differences, over every input scalar.
    pub fn check<F>(inputs: Vec<Tensor<f64>>, seed: u64, f: F) -> f64
    where
        F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>, AutodiffError>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = {
            let tape = Tape::new();
            let vars: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
            f(&tape, &vars).unwrap().shape()
        };
        let proj = rand_tensor(&mut rng, &shape);
        let value = |xs: &[Tensor<f64>]| -> f64 {
            let tape = Tape::new();
            let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
            let out = f(&tape, &vars).unwrap().to_tensor();
            out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        };
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&tape, &vars).unwrap();
        let loss = out.mul(tape.constant(proj.clone())).unwrap().sum();
        let grads = loss.backward().unwrap();
        let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.get(*v).unwrap().clone()).collect();

        let mut xs = inputs;
        let mut worst = 0.0f64;
        for (k, g) in analytic.iter().enumerate() {
            for i in 0..g.numel() {
                let orig = xs[k].data()[i];
                xs[k].data_mut()[i] = orig + STEP;
                let up = value(&xs);
                xs[k].data_mut()[i] = orig - STEP;
                let down = value(&xs);
                xs[k].data_mut()[i] = orig;
                worst = worst.max(rel_err(g.data()[i], (up - down) / (2.0 * STEP)));
            }
        }
        worst
    }
}
