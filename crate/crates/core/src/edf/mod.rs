//! EDF / EDF+ reading and writing.
//!
//! Layout: a 256-byte fixed header, then 256 bytes of per-signal header
//! fields (stored field-major: all labels, then all transducers, ...), then
//! `num_data_records` records each holding `samples_per_record` 16-bit
//! little-endian two's-complement integers per signal, in signal order.
//! EDF+ annotation signals (label `EDF Annotations`) carry time-stamped
//! annotation lists instead of waveform samples.

mod header;
mod tal;

use chrono::NaiveDateTime;

pub use header::{EdfHeader, SignalHeader, ANNOTATION_LABEL};
pub use tal::Annotation;

use crate::subject::{Race, Sex, SubjectMeta};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EdfError {
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("malformed header field `{field}`: {value:?}")]
    MalformedHeader { field: String, value: String },
    #[error("bad scaling on signal `{label}`: {detail}")]
    BadScaling { label: String, detail: String },
    #[error("sample {value} on signal `{label}` is outside the physical range [{min}, {max}]")]
    RangeOverflow { label: String, value: f64, min: f64, max: f64 },
    #[error("field `{field}` value {value:?} does not fit in {width} bytes")]
    FieldOverflow { field: String, value: String, width: usize },
    #[error("inconsistent recording: {0}")]
    Inconsistent(String),
}

/// One waveform signal decoded to physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub header: SignalHeader,
    pub samples: Vec<f64>,
    pub sampling_rate_hz: f64,
}

/// Header of an EDF+ annotation signal and its position among all signals.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSignal {
    pub position: usize,
    pub header: SignalHeader,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub header: EdfHeader,
    pub channels: Vec<Channel>,
    pub annotations: Vec<Annotation>,
    pub annotation_signal: Option<AnnotationSignal>,
    pub subject: SubjectMeta,
}

impl Recording {
    /// Study length in seconds.
    pub fn duration_s(&self) -> f64 {
        self.header.num_data_records.max(0) as f64 * self.header.record_duration_s
    }

    pub fn channel(&self, label: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.header.label == label)
    }
}

/// Default subject derived from the EDF+ patient field (`code sex birthdate name`).
fn subject_from_patient_id(patient_id: &str) -> SubjectMeta {
    let key = patient_id.split_whitespace().next().unwrap_or("");
    let key = if key.is_empty() || key == "X" { "unknown" } else { key };
    let sex = match patient_id.split_whitespace().nth(1) {
        Some("M") => Sex::Male,
        _ => Sex::FemaleOrUnknown,
    };
    SubjectMeta { patient_key: key.to_string(), age_years: 0.0, race: Race::OthersUnknown, sex }
}

/// Decodes a complete EDF/EDF+ byte stream.
///
/// A `num_data_records` of `-1` is repaired from the byte count.
pub fn parse_edf(bytes: &[u8]) -> Result<Recording, EdfError> {
    let (mut header, signals) = header::parse_headers(bytes)?;
    let record_bytes: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
    let data = &bytes[header.header_bytes..];
    if record_bytes == 0 {
        return Err(EdfError::MalformedHeader { field: "samples_per_record".into(), value: "0".into() });
    }
    let records = if header.num_data_records < 0 {
        if !data.len().is_multiple_of(record_bytes) {
            return Err(EdfError::TruncatedFile {
                expected: header.header_bytes + (data.len() / record_bytes + 1) * record_bytes,
                actual: bytes.len(),
            });
        }
        let n = data.len() / record_bytes;
        header.num_data_records = n as i64;
        n
    } else {
        header.num_data_records as usize
    };
    let expected = header.header_bytes + records * record_bytes;
    if bytes.len() != expected {
        return Err(EdfError::TruncatedFile { expected, actual: bytes.len() });
    }

    let mut channels = Vec::new();
    let mut annotation_signal = None;
    let mut annotations = Vec::new();
    let mut offsets = Vec::with_capacity(signals.len());
    let mut off = 0;
    for s in &signals {
        offsets.push(off);
        off += s.samples_per_record * 2;
    }
    for (pos, sig) in signals.iter().enumerate() {
        if sig.is_annotation() {
            for r in 0..records {
                let start = r * record_bytes + offsets[pos];
                annotations.extend(tal::decode_record(&data[start..start + sig.samples_per_record * 2])?);
            }
            if annotation_signal.is_none() {
                annotation_signal = Some(AnnotationSignal { position: pos, header: sig.clone() });
            }
            continue;
        }
        let (dmin, dmax) = (sig.digital_min as f64, sig.digital_max as f64);
        let gain = (sig.physical_max - sig.physical_min) / (dmax - dmin);
        let mut samples = Vec::with_capacity(records * sig.samples_per_record);
        for r in 0..records {
            let start = r * record_bytes + offsets[pos];
            let chunk = &data[start..start + sig.samples_per_record * 2];
            samples.extend(
                chunk
                    .chunks_exact(2)
                    .map(|b| sig.physical_min + (i16::from_le_bytes([b[0], b[1]]) as f64 - dmin) * gain),
            );
        }
        channels.push(Channel {
            sampling_rate_hz: sig.samples_per_record as f64 / header.record_duration_s,
            header: sig.clone(),
            samples,
        });
    }
    let subject = subject_from_patient_id(&header.patient_id);
    Ok(Recording { header, channels, annotations, annotation_signal, subject })
}

/// Encodes a recording as EDF (EDF+ when it carries an annotation signal).
pub fn write_edf(rec: &Recording) -> Result<Vec<u8>, EdfError> {
    let records = usize::try_from(rec.header.num_data_records)
        .map_err(|_| EdfError::Inconsistent(format!("num_data_records = {}", rec.header.num_data_records)))?;
    let mut signals: Vec<SignalHeader> = rec.channels.iter().map(|c| c.header.clone()).collect();
    if let Some(a) = &rec.annotation_signal {
        if a.position > signals.len() {
            return Err(EdfError::Inconsistent(format!("annotation signal position {}", a.position)));
        }
        signals.insert(a.position, a.header.clone());
    }
    for c in &rec.channels {
        if c.samples.len() != records * c.header.samples_per_record {
            return Err(EdfError::Inconsistent(format!(
                "signal `{}` has {} samples, header implies {}",
                c.header.label,
                c.samples.len(),
                records * c.header.samples_per_record
            )));
        }
    }
    let mut header = rec.header.clone();
    header.num_signals = signals.len();
    header.header_bytes = 256 * (signals.len() + 1);
    let mut out = header::write_headers(&header, &signals)?;

    let digital: Vec<Vec<i16>> = rec.channels.iter().map(quantize).collect::<Result<_, _>>()?;
    let annotation_records = match &rec.annotation_signal {
        Some(a) => tal::encode_records(
            &rec.annotations,
            records,
            rec.header.record_duration_s,
            a.header.samples_per_record * 2,
        )?,
        None => Vec::new(),
    };
    for r in 0..records {
        let mut ch = 0;
        for (pos, sig) in signals.iter().enumerate() {
            if rec.annotation_signal.as_ref().is_some_and(|a| a.position == pos) {
                out.extend_from_slice(&annotation_records[r]);
                continue;
            }
            let spr = sig.samples_per_record;
            for d in &digital[ch][r * spr..(r + 1) * spr] {
                out.extend_from_slice(&d.to_le_bytes());
            }
            ch += 1;
        }
    }
    Ok(out)
}

fn quantize(c: &Channel) -> Result<Vec<i16>, EdfError> {
    let h = &c.header;
    h.check_scaling()?;
    let (dmin, dmax) = (h.digital_min as f64, h.digital_max as f64);
    let gain = (h.physical_max - h.physical_min) / (dmax - dmin);
    let (lo, hi) = (dmin.min(dmax), dmin.max(dmax));
    c.samples
        .iter()
        .map(|&p| {
            let d = ((p - h.physical_min) / gain + dmin).round();
            if !(d >= lo && d <= hi) {
                return Err(EdfError::RangeOverflow {
                    label: h.label.clone(),
                    value: p,
                    min: h.physical_min,
                    max: h.physical_max,
                });
            }
            Ok(d as i16)
        })
        .collect()
}

/// Builds a plain-EDF recording from physical-unit signals sharing one record
/// length. Digital range is the full 16-bit span; physical ranges are given.
pub fn build_recording(
    patient_id: &str,
    start: NaiveDateTime,
    record_duration_s: f64,
    signals: Vec<(SignalHeader, Vec<f64>)>,
) -> Result<Recording, EdfError> {
    let first = signals.first().ok_or_else(|| EdfError::Inconsistent("no signals".into()))?;
    let records = first.1.len() / first.0.samples_per_record.max(1);
    let channels = signals
        .into_iter()
        .map(|(header, samples)| Channel {
            sampling_rate_hz: header.samples_per_record as f64 / record_duration_s,
            header,
            samples,
        })
        .collect::<Vec<_>>();
    let header = EdfHeader {
        version: "0".into(),
        patient_id: patient_id.into(),
        recording_id: String::new(),
        start,
        header_bytes: 256 * (channels.len() + 1),
        reserved: String::new(),
        num_data_records: records as i64,
        record_duration_s,
        num_signals: channels.len(),
    };
    Ok(Recording {
        subject: subject_from_patient_id(patient_id),
        header,
        channels,
        annotations: Vec::new(),
        annotation_signal: None,
    })
}
