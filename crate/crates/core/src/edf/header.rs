use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};

use super::EdfError;

pub const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start: NaiveDateTime,
    pub header_bytes: usize,
    /// `EDF+C` / `EDF+D` for EDF+, blank for plain EDF.
    pub reserved: String,
    /// `-1` means unknown; [`super::parse_edf`] repairs it from the file size.
    pub num_data_records: i64,
    pub record_duration_s: f64,
    pub num_signals: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dim: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl SignalHeader {
    /// EEG signal header with the full 16-bit digital range.
    pub fn eeg(label: &str, physical_min: f64, physical_max: f64, samples_per_record: usize) -> Self {
        Self {
            label: label.to_string(),
            transducer: String::new(),
            physical_dim: "uV".into(),
            physical_min,
            physical_max,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record,
            reserved: String::new(),
        }
    }

    pub fn annotations(samples_per_record: usize) -> Self {
        Self {
            label: ANNOTATION_LABEL.into(),
            transducer: String::new(),
            physical_dim: String::new(),
            physical_min: -1.0,
            physical_max: 1.0,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record,
            reserved: String::new(),
        }
    }

    pub fn is_annotation(&self) -> bool {
        self.label == ANNOTATION_LABEL
    }

    /// Physical units per digital step.
    pub fn quantization_step(&self) -> f64 {
        (self.physical_max - self.physical_min).abs() / (self.digital_max as f64 - self.digital_min as f64).abs()
    }

    pub(crate) fn check_scaling(&self) -> Result<(), EdfError> {
        if self.digital_max == self.digital_min {
            return Err(EdfError::BadScaling {
                label: self.label.clone(),
                detail: format!("digital_min == digital_max == {}", self.digital_min),
            });
        }
        if self.physical_max == self.physical_min {
            return Err(EdfError::BadScaling {
                label: self.label.clone(),
                detail: format!("physical_min == physical_max == {}", self.physical_min),
            });
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn field(&mut self, name: &str, width: usize) -> Result<&'a str, EdfError> {
        let raw = self
            .bytes
            .get(self.pos..self.pos + width)
            .ok_or(EdfError::TruncatedFile { expected: self.pos + width, actual: self.bytes.len() })?;
        self.pos += width;
        if !raw.iter().all(|b| (0x20..=0x7e).contains(b)) {
            return Err(EdfError::MalformedHeader {
                field: name.into(),
                value: String::from_utf8_lossy(raw).into_owned(),
            });
        }
        Ok(std::str::from_utf8(raw).expect("printable ascii").trim_end())
    }

    fn number<T: std::str::FromStr>(&mut self, name: &str, width: usize) -> Result<T, EdfError> {
        let s = self.field(name, width)?;
        s.trim().parse().map_err(|_| EdfError::MalformedHeader { field: name.into(), value: s.into() })
    }
}

fn parse_start(date: &str, time: &str) -> Result<NaiveDateTime, EdfError> {
    let bad = |f: &str, v: &str| EdfError::MalformedHeader { field: f.into(), value: v.into() };
    let parts = |s: &str| -> Option<[u32; 3]> {
        let v: Vec<u32> = s.split('.').map(|p| p.parse().ok()).collect::<Option<_>>()?;
        (v.len() == 3 && s.len() == 8).then(|| [v[0], v[1], v[2]])
    };
    let [dd, mm, yy] = parts(date).ok_or_else(|| bad("startdate", date))?;
    let [h, mi, s] = parts(time).ok_or_else(|| bad("starttime", time))?;
    // EDF two-digit years clip at 1985..=2084.
    let year = if yy >= 85 { 1900 + yy } else { 2000 + yy } as i32;
    NaiveDate::from_ymd_opt(year, mm, dd)
        .and_then(|d| d.and_hms_opt(h, mi, s))
        .ok_or_else(|| bad("startdate", &format!("{date} {time}")))
}

pub(super) fn parse_headers(bytes: &[u8]) -> Result<(EdfHeader, Vec<SignalHeader>), EdfError> {
    if bytes.len() < 256 {
        return Err(EdfError::TruncatedFile { expected: 256, actual: bytes.len() });
    }
    let mut c = Cursor { bytes, pos: 0 };
    let version = c.field("version", 8)?.to_string();
    let patient_id = c.field("patient_id", 80)?.to_string();
    let recording_id = c.field("recording_id", 80)?.to_string();
    let date = c.field("startdate", 8)?;
    let time = c.field("starttime", 8)?;
    let start = parse_start(date, time)?;
    let header_bytes: usize = c.number("header_bytes", 8)?;
    let reserved = c.field("reserved", 44)?.to_string();
    let num_data_records: i64 = c.number("num_data_records", 8)?;
    let record_duration_s: f64 = c.number("record_duration", 8)?;
    let num_signals: usize = c.number("num_signals", 4)?;

    if num_data_records < -1 {
        return Err(EdfError::MalformedHeader {
            field: "num_data_records".into(),
            value: num_data_records.to_string(),
        });
    }
    if !(record_duration_s > 0.0 && record_duration_s.is_finite()) {
        return Err(EdfError::MalformedHeader {
            field: "record_duration".into(),
            value: record_duration_s.to_string(),
        });
    }
    if header_bytes != 256 * (num_signals + 1) {
        return Err(EdfError::MalformedHeader {
            field: "header_bytes".into(),
            value: format!("{header_bytes} (expected {} for {num_signals} signals)", 256 * (num_signals + 1)),
        });
    }
    if bytes.len() < header_bytes {
        return Err(EdfError::TruncatedFile { expected: header_bytes, actual: bytes.len() });
    }

    let ns = num_signals;
    let texts = |c: &mut Cursor, name: &str, w: usize| -> Result<Vec<String>, EdfError> {
        (0..ns).map(|_| c.field(name, w).map(str::to_string)).collect()
    };
    let labels = texts(&mut c, "label", 16)?;
    let transducers = texts(&mut c, "transducer", 80)?;
    let dims = texts(&mut c, "physical_dimension", 8)?;
    let pmins: Vec<f64> = (0..ns).map(|_| c.number("physical_min", 8)).collect::<Result<_, _>>()?;
    let pmaxs: Vec<f64> = (0..ns).map(|_| c.number("physical_max", 8)).collect::<Result<_, _>>()?;
    let dmins: Vec<i32> = (0..ns).map(|_| c.number("digital_min", 8)).collect::<Result<_, _>>()?;
    let dmaxs: Vec<i32> = (0..ns).map(|_| c.number("digital_max", 8)).collect::<Result<_, _>>()?;
    let prefilters = texts(&mut c, "prefiltering", 80)?;
    let sprs: Vec<usize> = (0..ns).map(|_| c.number("samples_per_record", 8)).collect::<Result<_, _>>()?;
    let reserveds = texts(&mut c, "signal_reserved", 32)?;

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let s = SignalHeader {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dim: dims[i].clone(),
            physical_min: pmins[i],
            physical_max: pmaxs[i],
            digital_min: dmins[i],
            digital_max: dmaxs[i],
            prefiltering: prefilters[i].clone(),
            samples_per_record: sprs[i],
            reserved: reserveds[i].clone(),
        };
        if s.samples_per_record == 0 {
            return Err(EdfError::MalformedHeader { field: "samples_per_record".into(), value: "0".into() });
        }
        if !s.is_annotation() {
            s.check_scaling()?;
        }
        signals.push(s);
    }
    let header = EdfHeader {
        version,
        patient_id,
        recording_id,
        start,
        header_bytes,
        reserved,
        num_data_records,
        record_duration_s,
        num_signals,
    };
    Ok((header, signals))
}

fn put(out: &mut Vec<u8>, name: &str, value: &str, width: usize) -> Result<(), EdfError> {
    if value.len() > width || !value.bytes().all(|b| (0x20..=0x7e).contains(&b)) {
        return Err(EdfError::FieldOverflow { field: name.into(), value: value.into(), width });
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

/// Shortest decimal text for `v` that fits in `width` characters.
pub(crate) fn format_real(name: &str, v: f64, width: usize) -> Result<String, EdfError> {
    let s = format!("{v}");
    if s.len() <= width {
        return Ok(s);
    }
    for prec in (0..width).rev() {
        let t = format!("{v:.prec$}");
        let t = if t.contains('.') { t.trim_end_matches('0').trim_end_matches('.').to_string() } else { t };
        if t.len() <= width {
            return Ok(t);
        }
    }
    Err(EdfError::FieldOverflow { field: name.into(), value: s, width })
}

pub(super) fn write_headers(h: &EdfHeader, signals: &[SignalHeader]) -> Result<Vec<u8>, EdfError> {
    let mut out = Vec::with_capacity(256 * (signals.len() + 1));
    put(&mut out, "version", &h.version, 8)?;
    put(&mut out, "patient_id", &h.patient_id, 80)?;
    put(&mut out, "recording_id", &h.recording_id, 80)?;
    let s = h.start;
    put(&mut out, "startdate", &format!("{:02}.{:02}.{:02}", s.day(), s.month(), s.year().rem_euclid(100)), 8)?;
    put(&mut out, "starttime", &format!("{:02}.{:02}.{:02}", s.hour(), s.minute(), s.second()), 8)?;
    put(&mut out, "header_bytes", &h.header_bytes.to_string(), 8)?;
    put(&mut out, "reserved", &h.reserved, 44)?;
    put(&mut out, "num_data_records", &h.num_data_records.to_string(), 8)?;
    put(&mut out, "record_duration", &format_real("record_duration", h.record_duration_s, 8)?, 8)?;
    put(&mut out, "num_signals", &signals.len().to_string(), 4)?;

    for s in signals {
        put(&mut out, "label", &s.label, 16)?;
    }
    for s in signals {
        put(&mut out, "transducer", &s.transducer, 80)?;
    }
    for s in signals {
        put(&mut out, "physical_dimension", &s.physical_dim, 8)?;
    }
    for s in signals {
        put(&mut out, "physical_min", &format_real("physical_min", s.physical_min, 8)?, 8)?;
    }
    for s in signals {
        put(&mut out, "physical_max", &format_real("physical_max", s.physical_max, 8)?, 8)?;
    }
    for s in signals {
        put(&mut out, "digital_min", &s.digital_min.to_string(), 8)?;
    }
    for s in signals {
        put(&mut out, "digital_max", &s.digital_max.to_string(), 8)?;
    }
    for s in signals {
        put(&mut out, "prefiltering", &s.prefiltering, 80)?;
    }
    for s in signals {
        put(&mut out, "samples_per_record", &s.samples_per_record.to_string(), 8)?;
    }
    for s in signals {
        put(&mut out, "signal_reserved", &s.reserved, 32)?;
    }
    Ok(out)
}
