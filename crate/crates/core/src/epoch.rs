//! 30-second scoring windows cut from a prepared recording.

use crate::edf::{Annotation, Recording};
use crate::montage::MONTAGE;
use crate::resample::{resample, ResampleError};
use crate::stage::Stage;

pub const EPOCH_SECONDS: usize = 30;
pub const SAMPLE_RATE_HZ: usize = 128;
pub const EPOCH_SAMPLES: usize = EPOCH_SECONDS * SAMPLE_RATE_HZ;
pub const NUM_CHANNELS: usize = MONTAGE.len();
/// Largest onset deviation from the 30 s grid that is snapped rather than rejected.
pub const SNAP_TOLERANCE_S: f64 = 0.5;

/// One scored window: `EPOCH_SAMPLES × NUM_CHANNELS`, row-major (time-major,
/// channel-minor), channels in [`MONTAGE`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct SleepEpoch {
    samples: Vec<f32>,
    pub label: Stage,
    pub patient_key: String,
    pub epoch_index: u32,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EpochError {
    #[error("epoch needs {expected} samples, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("epoch contains non-finite samples")]
    NonFinite,
    #[error("stage annotation at {onset_s}s is {offset_s:.3}s off the 30 s grid")]
    UnalignedAnnotation { onset_s: f64, offset_s: f64 },
    #[error("recording not ready for segmentation: {0}")]
    NotPrepared(String),
    #[error(transparent)]
    Resample(#[from] ResampleError),
}

impl SleepEpoch {
    pub fn new(
        samples: Vec<f32>,
        label: Stage,
        patient_key: impl Into<String>,
        epoch_index: u32,
    ) -> Result<Self, EpochError> {
        let expected = EPOCH_SAMPLES * NUM_CHANNELS;
        if samples.len() != expected {
            return Err(EpochError::BadLength { expected, actual: samples.len() });
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(EpochError::NonFinite);
        }
        Ok(Self { samples, label, patient_key: patient_key.into(), epoch_index })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample(&self, t: usize, channel: usize) -> f32 {
        self.samples[t * NUM_CHANNELS + channel]
    }

    /// One channel as a contiguous time series.
    pub fn channel(&self, channel: usize) -> Vec<f32> {
        self.samples.iter().skip(channel).step_by(NUM_CHANNELS).copied().collect()
    }
}

/// Resamples every channel to `to_hz` and updates the per-signal headers.
pub fn resample_recording(rec: &Recording, to_hz: f64) -> Result<Recording, EpochError> {
    let mut out = rec.clone();
    let spr = to_hz * rec.header.record_duration_s;
    if (spr - spr.round()).abs() > 1e-9 {
        return Err(EpochError::NotPrepared(format!(
            "record duration {}s does not hold a whole number of samples at {to_hz} Hz",
            rec.header.record_duration_s
        )));
    }
    for c in &mut out.channels {
        if c.sampling_rate_hz != to_hz {
            c.samples = resample(&c.samples, c.sampling_rate_hz, to_hz)?;
            c.sampling_rate_hz = to_hz;
            c.header.samples_per_record = spr.round() as usize;
        }
    }
    Ok(out)
}

/// Result of cutting one recording into epochs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segmentation {
    pub epochs: Vec<SleepEpoch>,
    /// Full windows without a recognized stage (missing or `Sleep stage ?`).
    pub unscored_windows: usize,
    /// Samples per channel after the last full window.
    pub tail_samples: usize,
    /// Onsets that were moved onto the grid.
    pub snapped_onsets: Vec<f64>,
}

/// Cuts a prepared recording (montage selected, all channels at 128 Hz)
/// into 30 s epochs labelled from stage annotations.
///
/// Annotation onsets are seconds from recording start. A stage annotation
/// covering `k·30` seconds labels `k` consecutive windows.
pub fn segment_epochs(rec: &Recording, stage_annotations: &[Annotation]) -> Result<Segmentation, EpochError> {
    if rec.channels.len() != NUM_CHANNELS {
        return Err(EpochError::NotPrepared(format!("{} channels, expected {NUM_CHANNELS}", rec.channels.len())));
    }
    let len = rec.channels[0].samples.len();
    for c in &rec.channels {
        if c.sampling_rate_hz != SAMPLE_RATE_HZ as f64 {
            return Err(EpochError::NotPrepared(format!("`{}` is at {} Hz", c.header.label, c.sampling_rate_hz)));
        }
        if c.samples.len() != len {
            return Err(EpochError::NotPrepared("channels differ in length".into()));
        }
    }
    let windows = len / EPOCH_SAMPLES;
    let mut labels: Vec<Option<Stage>> = vec![None; windows];
    let mut snapped = Vec::new();
    let step = EPOCH_SECONDS as f64;
    for a in stage_annotations.iter().filter(|a| Stage::is_stage_annotation(&a.text)) {
        let slot = (a.onset_s / step).round();
        let offset = a.onset_s - slot * step;
        if offset.abs() > SNAP_TOLERANCE_S || slot < 0.0 {
            return Err(EpochError::UnalignedAnnotation { onset_s: a.onset_s, offset_s: offset });
        }
        if offset.abs() > 1e-9 {
            snapped.push(a.onset_s);
        }
        let count = a.duration_s.map_or(1.0, |d| (d / step).round().max(1.0)) as usize;
        let stage = Stage::from_annotation(&a.text);
        for w in (slot as usize)..(slot as usize + count).min(windows) {
            labels[w] = stage;
        }
    }
    let key = rec.subject.patient_key.clone();
    let mut epochs = Vec::new();
    let mut unscored = 0;
    for (w, label) in labels.iter().enumerate() {
        let Some(stage) = label else {
            unscored += 1;
            continue;
        };
        let mut samples = Vec::with_capacity(EPOCH_SAMPLES * NUM_CHANNELS);
        for t in w * EPOCH_SAMPLES..(w + 1) * EPOCH_SAMPLES {
            samples.extend(rec.channels.iter().map(|c| c.samples[t] as f32));
        }
        epochs.push(SleepEpoch::new(samples, *stage, key.clone(), w as u32)?);
    }
    Ok(Segmentation {
        epochs,
        unscored_windows: unscored,
        tail_samples: len - windows * EPOCH_SAMPLES,
        snapped_onsets: snapped,
    })
}
