//! Time-stamped annotation lists (TALs) inside EDF+ annotation records.
//!
//! A TAL is `+onset[\x15duration]\x14text\x14[text\x14...]\x00`. The first TAL
//! of every record carries no text and marks the record's start time.

use super::EdfError;

const DURATION_SEP: u8 = 0x15;
const TEXT_SEP: u8 = 0x14;

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    /// Seconds from recording start.
    pub onset_s: f64,
    pub duration_s: Option<f64>,
    pub text: String,
}

fn malformed(value: &[u8]) -> EdfError {
    EdfError::MalformedHeader { field: "TAL".into(), value: String::from_utf8_lossy(value).into_owned() }
}

fn parse_seconds(raw: &[u8]) -> Result<f64, EdfError> {
    let s = std::str::from_utf8(raw).map_err(|_| malformed(raw))?;
    if !(s.starts_with('+') || s.starts_with('-')) {
        return Err(malformed(raw));
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| malformed(raw))
}

/// Decodes every text-bearing annotation in one record's annotation bytes.
pub(super) fn decode_record(bytes: &[u8]) -> Result<Vec<Annotation>, EdfError> {
    let mut out = Vec::new();
    for tal in bytes.split(|&b| b == 0).filter(|t| !t.is_empty()) {
        let mut parts = tal.split(|&b| b == TEXT_SEP);
        let stamp = parts.next().unwrap_or_default();
        let (onset, duration) = match stamp.iter().position(|&b| b == DURATION_SEP) {
            Some(i) => {
                (parse_seconds(&stamp[..i])?, Some(stamp[i + 1..].iter().map(|&b| b as char).collect::<String>()))
            }
            None => (parse_seconds(stamp)?, None),
        };
        let duration_s = match duration {
            Some(d) => {
                Some(d.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0).ok_or_else(|| malformed(tal))?)
            }
            None => None,
        };
        for text in parts.filter(|t| !t.is_empty()) {
            let text = std::str::from_utf8(text).map_err(|_| malformed(tal))?.to_string();
            out.push(Annotation { onset_s: onset, duration_s, text });
        }
    }
    Ok(out)
}

fn signed(v: f64) -> String {
    if v.is_sign_negative() {
        format!("{v}")
    } else {
        format!("+{v}")
    }
}

fn encode_tal(a: &Annotation) -> Vec<u8> {
    let mut t = signed(a.onset_s).into_bytes();
    if let Some(d) = a.duration_s {
        t.push(DURATION_SEP);
        t.extend_from_slice(format!("{d}").as_bytes());
    }
    t.push(TEXT_SEP);
    t.extend_from_slice(a.text.as_bytes());
    t.push(TEXT_SEP);
    t.push(0);
    t
}

/// Packs annotations greedily, in order, into `records` fixed-size records,
/// each led by its timekeeping TAL and zero-padded.
pub(super) fn encode_records(
    annotations: &[Annotation],
    records: usize,
    record_duration_s: f64,
    capacity: usize,
) -> Result<Vec<Vec<u8>>, EdfError> {
    let mut out = Vec::with_capacity(records);
    let mut pending = annotations.iter().peekable();
    for r in 0..records {
        let mut rec = signed(r as f64 * record_duration_s).into_bytes();
        rec.extend_from_slice(&[TEXT_SEP, TEXT_SEP, 0]);
        if rec.len() > capacity {
            return Err(EdfError::FieldOverflow {
                field: "annotation record".into(),
                value: format!("record {r}"),
                width: capacity,
            });
        }
        while let Some(a) = pending.peek() {
            let tal = encode_tal(a);
            if rec.len() + tal.len() > capacity {
                break;
            }
            rec.extend_from_slice(&tal);
            pending.next();
        }
        rec.resize(capacity, 0);
        out.push(rec);
    }
    if let Some(a) = pending.next() {
        return Err(EdfError::FieldOverflow {
            field: "annotations".into(),
            value: format!("annotation at {}s does not fit in {records} records", a.onset_s),
            width: capacity,
        });
    }
    Ok(out)
}
