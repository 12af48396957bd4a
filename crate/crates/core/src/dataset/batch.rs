use sleepformer_autodiff::Tensor;

use super::rng::{derive_seed, SplitMix64};
use super::split::Split;
use super::store::EpochStore;
use crate::epoch::{EPOCH_SAMPLES, NUM_CHANNELS};
use crate::stage::NUM_STAGES;

/// A training or evaluation minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, 3840, C]`, C = number of selected channels.
    pub inputs: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Per-sample weight, looked up from the label.
    pub weights: Vec<f32>,
    /// Store indices of the batch members.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchOptions {
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
    pub class_weights: [f64; NUM_STAGES],
    /// Montage indices fed to the model, in order; all seven when empty.
    pub channels: Vec<usize>,
}

impl BatchOptions {
    pub fn new(batch_size: usize, seed: u64) -> Self {
        Self { batch_size, seed, drop_last: false, class_weights: [1.0; NUM_STAGES], channels: Vec::new() }
    }

    pub fn batches_per_pass(&self, split_len: usize) -> usize {
        let b = self.batch_size.max(1);
        if self.drop_last {
            split_len / b
        } else {
            split_len.div_ceil(b)
        }
    }
}

/// Visiting order of a split for one pass: the split's store indices
/// shuffled by `SplitMix64(derive_seed(seed, pass))`.
pub fn pass_order(store: &EpochStore, split: Split, seed: u64, pass: u64) -> Vec<usize> {
    let mut order = store.indices(split).to_vec();
    SplitMix64::new(derive_seed(seed, pass)).shuffle(&mut order);
    order
}

/// Gathers epochs into a batch, keeping only `channels` (all when empty).
pub fn assemble(store: &EpochStore, indices: &[usize], class_weights: &[f64; NUM_STAGES], channels: &[usize]) -> Batch {
    let all: Vec<usize> = (0..NUM_CHANNELS).collect();
    let chans = if channels.is_empty() { &all[..] } else { channels };
    let c = chans.len();
    let mut data = Vec::with_capacity(indices.len() * EPOCH_SAMPLES * c);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let e = store.epoch(i);
        if c == NUM_CHANNELS && chans == all {
            data.extend_from_slice(e.samples());
        } else {
            for row in e.samples().chunks_exact(NUM_CHANNELS) {
                data.extend(chans.iter().map(|&ch| row[ch]));
            }
        }
        labels.push(e.label.index());
    }
    let weights = labels.iter().map(|&l| class_weights[l] as f32).collect();
    let inputs = Tensor::new(&[indices.len(), EPOCH_SAMPLES, c], data).expect("batch extent");
    Batch { inputs, labels, weights, indices: indices.to_vec() }
}

/// Lazily assembled batches over one shuffled pass of a split.
pub struct Batches<'a> {
    store: &'a EpochStore,
    order: Vec<usize>,
    opts: &'a BatchOptions,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let b = self.opts.batch_size.max(1);
        let rest = self.order.len() - self.pos;
        if rest == 0 || (self.opts.drop_last && rest < b) {
            return None;
        }
        let take = rest.min(b);
        let idx = &self.order[self.pos..self.pos + take];
        self.pos += take;
        Some(assemble(self.store, idx, &self.opts.class_weights, &self.opts.channels))
    }
}

pub fn make_batches<'a>(store: &'a EpochStore, split: Split, opts: &'a BatchOptions, pass: u64) -> Batches<'a> {
    Batches { store, order: pass_order(store, split, opts.seed, pass), opts, pos: 0 }
}

/// Unshuffled, undropped batches in store order, for evaluation.
pub fn sequential_batches<'a>(store: &'a EpochStore, split: Split, opts: &'a BatchOptions) -> Batches<'a> {
    Batches { store, order: store.indices(split).to_vec(), opts, pos: 0 }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::epoch::SleepEpoch;
    use crate::stage::Stage;

    fn store(n: usize) -> EpochStore {
        let epochs = (0..n)
            .map(|i| {
                let s = (0..EPOCH_SAMPLES * NUM_CHANNELS).map(|j| (i * 100 + j % NUM_CHANNELS) as f32).collect();
                SleepEpoch::new(s, Stage::from_index(i % 5).unwrap(), "p", i as u32).unwrap()
            })
            .collect();
        let mut s = EpochStore::new(epochs);
        s.assign_splits(&BTreeMap::from([("p".to_string(), Split::Train)])).unwrap();
        s
    }

    #[test]
    fn sizes_and_drop_last() {
        let s = store(10);
        let mut o = BatchOptions::new(4, 1);
        let sizes: Vec<usize> = make_batches(&s, Split::Train, &o, 0).map(|b| b.len()).collect();
        assert_eq!(sizes, [4, 4, 2]);
        o.drop_last = true;
        assert_eq!(make_batches(&s, Split::Train, &o, 0).count(), 2);
        assert_eq!(o.batches_per_pass(10), 2);
    }

    #[test]
    fn order_is_replayable_per_pass() {
        let s = store(20);
        assert_eq!(pass_order(&s, Split::Train, 3, 0), pass_order(&s, Split::Train, 3, 0));
        assert_ne!(pass_order(&s, Split::Train, 3, 0), pass_order(&s, Split::Train, 3, 1));
    }

    #[test]
    fn weights_follow_labels_and_channels_select() {
        let s = store(5);
        let w = [0.9, 5.0, 0.9, 0.9, 0.9];
        let b = assemble(&s, &[1, 3], &w, &[3]);
        assert_eq!(b.inputs.shape(), &[2, EPOCH_SAMPLES, 1]);
        assert_eq!(b.weights, vec![5.0, 0.9]);
        assert_eq!(b.inputs.data()[0], 103.0);
        let full = assemble(&s, &[2], &w, &[]);
        assert_eq!(full.inputs.shape(), &[1, EPOCH_SAMPLES, NUM_CHANNELS]);
    }
}
