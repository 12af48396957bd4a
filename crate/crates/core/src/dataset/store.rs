use std::collections::{BTreeMap, BTreeSet};

use super::split::Split;
use super::DatasetError;
use crate::epoch::SleepEpoch;
use crate::stage::NUM_STAGES;
use crate::subject::SubjectMeta;

/// All epochs of a cohort, with patient metadata and split membership.
///
/// Immutable once splits are assigned; every epoch follows its patient's split.
#[derive(Clone, Debug, Default)]
pub struct EpochStore {
    epochs: Vec<SleepEpoch>,
    subjects: BTreeMap<String, SubjectMeta>,
    splits: BTreeMap<String, Split>,
    by_split: [Vec<usize>; 3],
}

fn slot(split: Split) -> usize {
    match split {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

impl EpochStore {
    pub fn new(epochs: Vec<SleepEpoch>) -> Self {
        Self { epochs, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn epochs(&self) -> &[SleepEpoch] {
        &self.epochs
    }

    pub fn epoch(&self, i: usize) -> &SleepEpoch {
        &self.epochs[i]
    }

    pub fn into_epochs(self) -> Vec<SleepEpoch> {
        self.epochs
    }

    /// Distinct patient keys, sorted.
    pub fn patients(&self) -> Vec<String> {
        self.epochs
            .iter()
            .map(|e| e.patient_key.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(String::from)
            .collect()
    }

    pub fn set_subjects(&mut self, subjects: BTreeMap<String, SubjectMeta>) {
        self.subjects = subjects;
    }

    pub fn subjects(&self) -> &BTreeMap<String, SubjectMeta> {
        &self.subjects
    }

    pub fn subject(&self, patient_key: &str) -> Option<&SubjectMeta> {
        self.subjects.get(patient_key)
    }

    /// Attaches a patient → split map. Every patient in the store must be
    /// assigned; extra keys are ignored.
    pub fn assign_splits(&mut self, splits: &BTreeMap<String, Split>) -> Result<(), DatasetError> {
        let mut by_split: [Vec<usize>; 3] = Default::default();
        for (i, e) in self.epochs.iter().enumerate() {
            let s = splits.get(&e.patient_key).ok_or_else(|| DatasetError::UnassignedPatient(e.patient_key.clone()))?;
            by_split[slot(*s)].push(i);
        }
        let present: BTreeSet<&str> = self.epochs.iter().map(|e| e.patient_key.as_str()).collect();
        self.splits =
            splits.iter().filter(|(k, _)| present.contains(k.as_str())).map(|(k, s)| (k.clone(), *s)).collect();
        self.by_split = by_split;
        Ok(())
    }

    pub fn splits(&self) -> &BTreeMap<String, Split> {
        &self.splits
    }

    pub fn split_of(&self, patient_key: &str) -> Option<Split> {
        self.splits.get(patient_key).copied()
    }

    /// Epoch indices of a split in store order; empty before splits are assigned.
    pub fn indices(&self, split: Split) -> &[usize] {
        &self.by_split[slot(split)]
    }

    pub fn class_counts(&self, split: Split) -> [usize; NUM_STAGES] {
        count_labels(self.indices(split).iter().map(|&i| &self.epochs[i]))
    }

    pub fn total_class_counts(&self) -> [usize; NUM_STAGES] {
        count_labels(self.epochs.iter())
    }
}

fn count_labels<'a>(epochs: impl Iterator<Item = &'a SleepEpoch>) -> [usize; NUM_STAGES] {
    let mut c = [0; NUM_STAGES];
    for e in epochs {
        c[e.label.index()] += 1;
    }
    c
}
