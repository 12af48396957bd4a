//! Synthetic multi-channel EEG with stage-specific rhythms.
//!
//! Every channel is band-limited Gaussian noise (0.5–30 Hz) plus the class
//! rhythm, mixed at a configurable signal-to-noise ratio:
//!
//! | stage | rhythm |
//! |-------|--------|
//! | W     | 10 Hz alpha, slowly waxing and waning |
//! | N1    | 6 Hz theta |
//! | N2    | 13 Hz spindle bursts (3–5 per epoch, 1–2 s each) |
//! | N3    | 1.5 Hz delta, +3 dB |
//! | REM   | one tone in 4–5 Hz plus one in 7–8 Hz, −3 dB |
//!
//! Epochs are dealt to patients at random. Patients differ in rhythm
//! frequency (±5%) and per-channel gain.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::store::EpochStore;
use super::DatasetError;
use crate::epoch::{SleepEpoch, EPOCH_SAMPLES, NUM_CHANNELS, SAMPLE_RATE_HZ};
use crate::stage::{Stage, NUM_STAGES};
use crate::subject::{Race, Sex, SubjectMeta};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub seed: u64,
    pub patients: usize,
    /// Rhythm-to-noise power ratio in dB before the per-stage offset.
    pub snr_db: f64,
    /// When set, only this montage channel carries the class rhythm.
    pub planted_channel: Option<usize>,
}

impl SynthConfig {
    pub fn new(n_per_class: usize, seed: u64) -> Self {
        Self { n_per_class, seed, patients: 20, snr_db: 0.0, planted_channel: None }
    }
}

/// Generates `5·n_per_class` labelled epochs.
pub fn synth_generate(n_per_class: usize, seed: u64) -> Result<EpochStore, DatasetError> {
    synth_generate_with(&SynthConfig::new(n_per_class, seed))
}

pub fn synth_generate_with(cfg: &SynthConfig) -> Result<EpochStore, DatasetError> {
    if cfg.n_per_class == 0 {
        return Err(DatasetError::BadSynthConfig("n_per_class must be at least 1".into()));
    }
    if cfg.patients < 20 {
        return Err(DatasetError::BadSynthConfig(format!("{} patients, need at least 20", cfg.patients)));
    }
    if cfg.planted_channel.is_some_and(|c| c >= NUM_CHANNELS) {
        return Err(DatasetError::BadSynthConfig(format!("planted channel {:?}", cfg.planted_channel)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let patients: Vec<Patient> = (0..cfg.patients).map(|p| Patient::draw(p, &mut rng)).collect();
    let total = cfg.n_per_class * NUM_STAGES;
    let mut next_index = vec![0u32; cfg.patients];
    let mut deal: Vec<usize> = (0..total).collect();
    deal.shuffle(&mut rng);
    let mut epochs = Vec::with_capacity(total);
    for n in 0..total {
        let stage = Stage::ALL[n % NUM_STAGES];
        let p = deal[n] % cfg.patients;
        let patient = &patients[p];
        let samples = render(stage, patient, cfg, &mut rng);
        epochs.push(
            SleepEpoch::new(samples, stage, patient.meta.patient_key.clone(), next_index[p])
                .expect("finite synthetic epoch"),
        );
        next_index[p] += 1;
    }
    let subjects: BTreeMap<String, SubjectMeta> =
        patients.into_iter().map(|p| (p.meta.patient_key.clone(), p.meta)).collect();
    let mut store = EpochStore::new(epochs);
    store.set_subjects(subjects);
    Ok(store)
}

struct Patient {
    meta: SubjectMeta,
    freq_scale: f64,
    channel_gain: [f64; NUM_CHANNELS],
}

impl Patient {
    fn draw(p: usize, rng: &mut ChaCha8Rng) -> Self {
        let races = [Race::White, Race::Black, Race::MultipleRaces, Race::Asian, Race::OthersUnknown];
        let meta = SubjectMeta {
            patient_key: format!("synth{p:03}"),
            age_years: rng.random_range(0.0..21.0),
            race: races[p % races.len()],
            sex: if p.is_multiple_of(2) { Sex::Male } else { Sex::FemaleOrUnknown },
        };
        Self {
            meta,
            freq_scale: rng.random_range(0.95..1.05),
            channel_gain: std::array::from_fn(|_| rng.random_range(0.8..1.2)),
        }
    }
}

/// Second-order Butterworth low-pass (bilinear transform) followed by a
/// one-pole DC blocker, then scaled to unit RMS.
fn band_noise(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = SAMPLE_RATE_HZ as f64;
    let k = (PI * 30.0 / fs).tan();
    let norm = 1.0 / (1.0 + 2f64.sqrt() * k + k * k);
    let (b0, b1, b2) = (k * k * norm, 2.0 * k * k * norm, k * k * norm);
    let (a1, a2) = (2.0 * (k * k - 1.0) * norm, (1.0 - 2f64.sqrt() * k + k * k) * norm);
    let r = (-2.0 * PI * 0.5 / fs).exp();
    let (mut x1, mut x2, mut y1, mut y2, mut hp_x, mut hp_y) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    // run-in so the filters reach steady state
    let warm = 256;
    let mut out = Vec::with_capacity(EPOCH_SAMPLES);
    for t in 0..EPOCH_SAMPLES + warm {
        let x: f64 = rng.sample(StandardNormal);
        let y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        (x2, x1, y2, y1) = (x1, x, y1, y);
        let hp = y - hp_x + r * hp_y;
        (hp_x, hp_y) = (y, hp);
        if t >= warm {
            out.push(hp);
        }
    }
    unit_rms(&mut out);
    out
}

fn unit_rms(v: &mut [f64]) {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    if rms > 0.0 {
        v.iter_mut().for_each(|x| *x /= rms);
    }
}

fn tone(f: f64, phase: f64, t: usize) -> f64 {
    (2.0 * PI * f * t as f64 / SAMPLE_RATE_HZ as f64 + phase).sin()
}

fn rhythm(stage: Stage, freq_scale: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let phase = rng.random_range(0.0..2.0 * PI);
    let fs = SAMPLE_RATE_HZ as f64;
    let (mut v, offset_db): (Vec<f64>, f64) = match stage {
        Stage::Wake => {
            let f = 10.0 * freq_scale;
            let mod_phase = rng.random_range(0.0..2.0 * PI);
            ((0..EPOCH_SAMPLES).map(|t| (1.0 + 0.4 * tone(0.1, mod_phase, t)) * tone(f, phase, t)).collect(), 0.0)
        }
        Stage::N1 => ((0..EPOCH_SAMPLES).map(|t| tone(6.0 * freq_scale, phase, t)).collect(), 0.0),
        Stage::N2 => {
            let f = 13.0 * freq_scale;
            let mut v = vec![0.0; EPOCH_SAMPLES];
            for _ in 0..rng.random_range(3..=5) {
                let len = (rng.random_range(1.0..2.0) * fs) as usize;
                let start = rng.random_range(0..EPOCH_SAMPLES - len);
                let ph = rng.random_range(0.0..2.0 * PI);
                for i in 0..len {
                    let env = (PI * i as f64 / len as f64).sin().powi(2);
                    v[start + i] += env * tone(f, ph, i);
                }
            }
            (v, 0.0)
        }
        Stage::N3 => ((0..EPOCH_SAMPLES).map(|t| tone(1.5 * freq_scale, phase, t)).collect(), 3.0),
        Stage::Rem => {
            let f1 = rng.random_range(4.0..5.0);
            let f2 = rng.random_range(7.0..8.0);
            let p2 = rng.random_range(0.0..2.0 * PI);
            ((0..EPOCH_SAMPLES).map(|t| tone(f1, phase, t) + tone(f2, p2, t)).collect(), -3.0)
        }
    };
    unit_rms(&mut v);
    (v, offset_db)
}

fn render(stage: Stage, patient: &Patient, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (r, offset_db) = rhythm(stage, patient.freq_scale, rng);
    let amp = 10f64.powf((cfg.snr_db + offset_db) / 20.0);
    let mut out = vec![0f32; EPOCH_SAMPLES * NUM_CHANNELS];
    for c in 0..NUM_CHANNELS {
        let noise = band_noise(rng);
        let carries = cfg.planted_channel.is_none_or(|p| p == c);
        let g = if carries { amp * patient.channel_gain[c] } else { 0.0 };
        // microvolt scale
        for t in 0..EPOCH_SAMPLES {
            out[t * NUM_CHANNELS + c] = (20.0 * (noise[t] + g * r[t])) as f32;
        }
    }
    out
}
