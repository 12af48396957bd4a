//! Per-patient demographics and the JSON-lines sidecar that carries them.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Race {
    White,
    Black,
    MultipleRaces,
    Asian,
    OthersUnknown,
}

impl Race {
    pub const ALL: [Race; 5] = [Race::White, Race::Black, Race::MultipleRaces, Race::Asian, Race::OthersUnknown];

    pub fn label(self) -> &'static str {
        match self {
            Race::White => "White",
            Race::Black => "Black",
            Race::MultipleRaces => "Multiple Races",
            Race::Asian => "Asian",
            Race::OthersUnknown => "Others and Unknown",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    Male,
    FemaleOrUnknown,
}

impl Sex {
    pub fn label(self) -> &'static str {
        match self {
            Sex::Male => "Male",
            Sex::FemaleOrUnknown => "Female or Unknown",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub patient_key: String,
    pub age_years: f64,
    pub race: Race,
    pub sex: Sex,
}

impl SubjectMeta {
    /// One-year age bin label: `0-1` .. `17-18`, then `18-100`.
    pub fn age_bucket(&self) -> String {
        age_bucket(self.age_years)
    }
}

pub fn age_bucket(age_years: f64) -> String {
    let years = age_years.max(0.0).floor() as u32;
    if years >= 18 {
        "18-100".to_string()
    } else {
        format!("{}-{}", years, years + 1)
    }
}

/// All bucket labels in display order.
pub fn age_buckets() -> Vec<String> {
    let mut v: Vec<String> = (0..18).map(|y| format!("{}-{}", y, y + 1)).collect();
    v.push("18-100".into());
    v
}

#[derive(Debug, thiserror::Error)]
pub enum SubjectError {
    #[error("subject sidecar line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("subject sidecar line {line}: empty patient_key")]
    EmptyKey { line: usize },
    #[error("subject sidecar line {line}: negative or non-finite age {age}")]
    BadAge { line: usize, age: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads one JSON object per line; blank lines are ignored.
pub fn read_subjects(reader: impl BufRead) -> Result<BTreeMap<String, SubjectMeta>, SubjectError> {
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: SubjectMeta =
            serde_json::from_str(&line).map_err(|source| SubjectError::Parse { line: i + 1, source })?;
        if meta.patient_key.is_empty() {
            return Err(SubjectError::EmptyKey { line: i + 1 });
        }
        if !(meta.age_years.is_finite() && meta.age_years >= 0.0) {
            return Err(SubjectError::BadAge { line: i + 1, age: meta.age_years });
        }
        out.insert(meta.patient_key.clone(), meta);
    }
    Ok(out)
}

pub fn write_subjects<'a>(
    mut w: impl Write,
    subjects: impl IntoIterator<Item = &'a SubjectMeta>,
) -> std::io::Result<()> {
    for s in subjects {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
