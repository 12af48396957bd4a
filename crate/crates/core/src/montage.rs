//! The seven-channel EEG montage and label normalization.

use crate::edf::Recording;

/// Model input channel order (column order of every epoch).
pub const MONTAGE: [&str; 7] = ["F4-M1", "O2-M1", "C4-M1", "O1-M2", "F3-M2", "C3-M2", "CZ-O1"];

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("missing channels: {}", missing.join(", "))]
pub struct MissingChannel {
    pub missing: Vec<String>,
}

/// Canonical channel name.
///
/// | raw label            | canonical |
/// |----------------------|-----------|
/// | `EEG F4-M1`, `f4-m1` | `F4-M1`   |
/// | `CZ-01`, `EEG Cz-O1` | `CZ-O1`   |
///
/// Strips surrounding whitespace and an optional `EEG ` prefix, uppercases,
/// and reads the `CZ-01` spelling as `CZ-O1`.
pub fn normalize_label(label: &str) -> String {
    let t = label.trim();
    let t = match t.get(..4) {
        Some(p) if p.eq_ignore_ascii_case("eeg ") => t[4..].trim_start(),
        _ => t,
    };
    let up = t.to_ascii_uppercase();
    if up == "CZ-01" {
        "CZ-O1".to_string()
    } else {
        up
    }
}

/// Position of the montage channel within [`MONTAGE`], by any accepted spelling.
pub fn montage_index(name: &str) -> Option<usize> {
    let n = normalize_label(name);
    MONTAGE.iter().position(|m| *m == n)
}

/// Keeps exactly the requested channels, in the requested order.
pub fn select_channels(rec: &Recording, montage: &[&str]) -> Result<Recording, MissingChannel> {
    let mut picked = Vec::with_capacity(montage.len());
    let mut missing = Vec::new();
    for want in montage {
        let key = normalize_label(want);
        match rec.channels.iter().find(|c| normalize_label(&c.header.label) == key) {
            Some(c) => picked.push(c.clone()),
            None => missing.push(key),
        }
    }
    if !missing.is_empty() {
        return Err(MissingChannel { missing });
    }
    let mut out = rec.clone();
    out.header.num_signals = picked.len() + usize::from(out.annotation_signal.is_some());
    out.header.header_bytes = 256 * (out.header.num_signals + 1);
    if let Some(a) = &mut out.annotation_signal {
        a.position = a.position.min(picked.len());
    }
    out.channels = picked;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::edf::{build_recording, SignalHeader};

    fn rec_with(labels: &[&str]) -> Recording {
        let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let sigs = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (SignalHeader::eeg(l, -100.0, 100.0, 4), vec![i as f64; 8]))
            .collect();
        build_recording("p", start, 1.0, sigs).unwrap()
    }

    #[test]
    fn normalization_table() {
        assert_eq!(normalize_label("EEG F4-M1"), "F4-M1");
        assert_eq!(normalize_label("f4-m1"), "F4-M1");
        assert_eq!(normalize_label("CZ-01"), "CZ-O1");
        assert_eq!(normalize_label("EEG Cz-O1"), "CZ-O1");
        assert_eq!(montage_index("eeg c3-m2"), Some(5));
    }

    #[test]
    fn picks_montage_order_from_twelve() {
        let labels = [
            "EOG LOC-M2",
            "EEG CZ-O1",
            "EEG C3-M2",
            "ECG",
            "EEG F3-M2",
            "EEG O1-M2",
            "Chin1-Chin2",
            "EEG C4-M1",
            "EEG O2-M1",
            "Airflow",
            "EEG F4-M1",
            "SpO2",
        ];
        let out = select_channels(&rec_with(&labels), &MONTAGE).unwrap();
        let got: Vec<String> = out.channels.iter().map(|c| normalize_label(&c.header.label)).collect();
        assert_eq!(got, MONTAGE);
        assert_eq!(out.channels[0].samples[0], 10.0);
    }

    #[test]
    fn reports_every_missing_name() {
        let labels = ["F4-M1", "O2-M1", "C4-M1", "O1-M2", "F3-M2", "C3-M2"];
        let err = select_channels(&rec_with(&labels), &MONTAGE).unwrap_err();
        assert_eq!(err.missing, vec!["CZ-O1".to_string()]);
        let err = select_channels(&rec_with(&["F4-M1"]), &MONTAGE).unwrap_err();
        assert_eq!(err.missing.len(), 6);
    }
}
