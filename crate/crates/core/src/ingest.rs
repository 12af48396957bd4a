//! Directory ingestion: EDF files plus a subject sidecar into an epoch store.
//!
//! Each `*.edf` file is one study. Its patient key is the file stem up to the
//! first `_` (`P0042_17.edf` belongs to patient `P0042`), and the subject
//! sidecar must hold a row for that key. Failures are recorded per file and
//! never abort the batch.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, DurationStats, EpochStore};
use crate::edf::{parse_edf, EdfError};
use crate::epoch::{resample_recording, segment_epochs, EpochError, Segmentation, SAMPLE_RATE_HZ};
use crate::montage::{select_channels, MissingChannel, MONTAGE};
use crate::stage::NUM_STAGES;
use crate::subject::SubjectMeta;

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error(transparent)]
    Edf(#[from] EdfError),
    #[error(transparent)]
    MissingChannel(#[from] MissingChannel),
    #[error(transparent)]
    Epoch(#[from] EpochError),
    #[error("no subject metadata for patient `{0}`")]
    NoSubject(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FileError {
    pub fn kind(&self) -> &'static str {
        match self {
            FileError::Edf(_) => "edf",
            FileError::MissingChannel(_) => "missing_channel",
            FileError::Epoch(EpochError::UnalignedAnnotation { .. }) => "unaligned_annotation",
            FileError::Epoch(_) => "epoch",
            FileError::NoSubject(_) => "no_subject",
            FileError::Io(_) => "io",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub file: String,
    pub patient_key: String,
    pub epochs: usize,
    pub class_counts: [usize; NUM_STAGES],
    pub unscored_windows: usize,
    pub tail_samples: usize,
    pub snapped_onsets: usize,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub file: String,
    pub kind: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files: Vec<FileReport>,
    pub rejects: Vec<Reject>,
    pub total_epochs: usize,
    pub class_counts: [usize; NUM_STAGES],
    pub duration: Option<DurationStats>,
}

pub struct Ingested {
    pub store: EpochStore,
    pub report: IngestReport,
}

/// Patient key for an EDF file name.
pub fn patient_key_for(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.split('_').next().unwrap_or_default().to_string()
}

/// Parses, selects the montage, resamples to 128 Hz and segments one study.
pub fn ingest_bytes(bytes: &[u8], patient_key: &str) -> Result<(Segmentation, f64), FileError> {
    let mut rec = parse_edf(bytes)?;
    rec.subject.patient_key = patient_key.to_string();
    let duration = rec.duration_s();
    let rec = select_channels(&rec, &MONTAGE)?;
    let rec = resample_recording(&rec, SAMPLE_RATE_HZ as f64)?;
    let annotations = rec.annotations.clone();
    Ok((segment_epochs(&rec, &annotations)?, duration))
}

fn ingest_file(path: &Path, subjects: &BTreeMap<String, SubjectMeta>) -> Result<(Segmentation, f64), FileError> {
    let key = patient_key_for(path);
    if !subjects.contains_key(&key) {
        return Err(FileError::NoSubject(key));
    }
    ingest_bytes(&std::fs::read(path)?, &key)
}

/// `*.edf` files directly inside `dir`, sorted by name.
pub fn list_edf_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("edf")))
        .collect();
    files.sort();
    Ok(files)
}

/// Ingests every EDF file in `dir` using up to `workers` threads.
///
/// Output order is by file name regardless of the worker count.
pub fn ingest_dir(
    dir: &Path,
    subjects: &BTreeMap<String, SubjectMeta>,
    workers: usize,
) -> Result<Ingested, DatasetError> {
    let files = list_edf_files(dir)?;
    if files.is_empty() {
        return Err(DatasetError::EmptyCohort);
    }
    let workers = workers.clamp(1, files.len());
    let mut results: Vec<Option<Result<(Segmentation, f64), FileError>>> = (0..files.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunks: Vec<_> = results.chunks_mut(files.len().div_ceil(workers)).enumerate().collect();
        let step = files.len().div_ceil(workers);
        for (c, slot) in chunks {
            let files = &files[c * step..];
            s.spawn(move || {
                for (r, f) in slot.iter_mut().zip(files) {
                    *r = Some(ingest_file(f, subjects));
                }
            });
        }
    });

    let mut epochs = Vec::new();
    let mut report =
        IngestReport { files: vec![], rejects: vec![], total_epochs: 0, class_counts: [0; NUM_STAGES], duration: None };
    let mut durations = Vec::new();
    let mut used = BTreeMap::new();
    for (path, result) in files.iter().zip(results) {
        let file = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match result.expect("every file visited") {
            Ok((seg, duration)) => {
                let key = patient_key_for(path);
                let mut counts = [0; NUM_STAGES];
                for e in &seg.epochs {
                    counts[e.label.index()] += 1;
                    report.class_counts[e.label.index()] += 1;
                }
                report.files.push(FileReport {
                    file,
                    patient_key: key.clone(),
                    epochs: seg.epochs.len(),
                    class_counts: counts,
                    unscored_windows: seg.unscored_windows,
                    tail_samples: seg.tail_samples,
                    snapped_onsets: seg.snapped_onsets.len(),
                    duration_s: duration,
                });
                durations.push(duration);
                used.insert(key.clone(), subjects[&key].clone());
                epochs.extend(seg.epochs);
            }
            Err(e) => report.rejects.push(Reject { file, kind: e.kind().to_string(), reason: e.to_string() }),
        }
    }
    report.total_epochs = epochs.len();
    report.duration = DurationStats::from_seconds(&durations);
    let mut store = EpochStore::new(epochs);
    store.set_subjects(used);
    Ok(Ingested { store, report })
}
