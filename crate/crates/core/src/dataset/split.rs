use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::rng::SplitMix64;
use super::DatasetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::Format(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// (train, val, test)
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { fractions: (0.70, 0.10, 0.20), seed: 0 }
    }
}

impl SplitSpec {
    pub fn new(fractions: (f64, f64, f64), seed: u64) -> Result<Self, DatasetError> {
        let s = Self { fractions, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let (a, b, c) = self.fractions;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(DatasetError::BadSplitSpec(format!("{:?}", self.fractions)));
        }
        Ok(())
    }

    /// Split sizes for `n` patients by largest remainder; ties favour the
    /// earlier split (train, then val).
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let f = [self.fractions.0, self.fractions.1, self.fractions.2];
        let quotas: Vec<f64> = f.iter().map(|x| x * n as f64).collect();
        let mut sizes: [usize; 3] = std::array::from_fn(|i| quotas[i].floor() as usize);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| {
            let (ri, rj) = (quotas[i] - quotas[i].floor(), quotas[j] - quotas[j].floor());
            rj.partial_cmp(&ri).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
        });
        let short = n - sizes.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            sizes[i] += 1;
        }
        sizes
    }
}

/// Assigns each patient to one split: sort and deduplicate the keys, shuffle
/// with `SplitMix64(seed)`, then take the first `sizes[0]` as train, the next
/// `sizes[1]` as val and the rest as test.
pub fn patient_split(patients: &[String], spec: &SplitSpec) -> Result<BTreeMap<String, Split>, DatasetError> {
    spec.validate()?;
    let mut keys: Vec<&String> = patients.iter().collect::<BTreeSet<_>>().into_iter().collect();
    if keys.is_empty() {
        return Err(DatasetError::EmptyCohort);
    }
    SplitMix64::new(spec.seed).shuffle(&mut keys);
    let [n_train, n_val, _] = spec.sizes(keys.len());
    Ok(keys
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (k.clone(), s)
        })
        .collect())
}

/// Reads `patient_key<TAB>split` lines; blank lines are ignored.
pub fn read_split_file(r: impl BufRead) -> Result<BTreeMap<String, Split>, DatasetError> {
    let mut out = BTreeMap::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (key, split) = line
            .split_once('\t')
            .ok_or_else(|| DatasetError::Format(format!("split file line {}: expected `key<TAB>split`", n + 1)))?;
        if out.insert(key.to_string(), split.trim().parse()?).is_some() {
            return Err(DatasetError::Format(format!("split file line {}: duplicate patient `{key}`", n + 1)));
        }
    }
    Ok(out)
}

pub fn write_split_file(mut w: impl Write, splits: &BTreeMap<String, Split>) -> std::io::Result<()> {
    for (k, s) in splits {
        writeln!(w, "{k}\t{s}")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub count: usize,
    pub mean_hours: f64,
    /// Population standard deviation.
    pub std_hours: f64,
}

impl DurationStats {
    /// Stats over study lengths given in seconds; `None` when empty.
    pub fn from_seconds(seconds: &[f64]) -> Option<Self> {
        if seconds.is_empty() {
            return None;
        }
        let n = seconds.len() as f64;
        let hours = seconds.iter().map(|s| s / 3600.0);
        let mean = hours.clone().sum::<f64>() / n;
        let var = hours.map(|h| (h - mean).powi(2)).sum::<f64>() / n;
        Some(DurationStats { count: seconds.len(), mean_hours: mean, std_hours: var.sqrt() })
    }
}

/// Mean and spread of study length per split, from `(split, seconds)` pairs.
pub fn duration_stats(durations: &[(Split, f64)]) -> BTreeMap<Split, DurationStats> {
    Split::ALL
        .into_iter()
        .filter_map(|split| {
            let secs: Vec<f64> = durations.iter().filter(|(s, _)| *s == split).map(|(_, d)| *d).collect();
            DurationStats::from_seconds(&secs).map(|d| (split, d))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:05}")).collect()
    }

    fn sizes(m: &BTreeMap<String, Split>) -> [usize; 3] {
        Split::ALL.map(|s| m.values().filter(|&&v| v == s).count())
    }

    #[test]
    fn ten_patients() {
        let m = patient_split(&keys(10), &SplitSpec { seed: 7, ..Default::default() }).unwrap();
        assert_eq!(sizes(&m), [7, 1, 2]);
        assert_eq!(m, patient_split(&keys(10), &SplitSpec { seed: 7, ..Default::default() }).unwrap());
    }

    #[test]
    fn cohort_scale() {
        assert_eq!(SplitSpec::default().sizes(3631), [2542, 363, 726]);
    }

    #[test]
    fn duplicates_and_empty() {
        let mut k = keys(4);
        k.extend(keys(4));
        assert_eq!(patient_split(&k, &SplitSpec::default()).unwrap().len(), 4);
        assert!(matches!(patient_split(&[], &SplitSpec::default()), Err(DatasetError::EmptyCohort)));
    }

    #[test]
    fn spec_validation() {
        assert!(SplitSpec::new((0.5, 0.5, 0.0), 1).is_err());
        assert!(SplitSpec::new((0.5, 0.3, 0.3), 1).is_err());
        assert!(SplitSpec::new((0.6, 0.2, 0.2), 1).is_ok());
    }

    #[test]
    fn split_file_round_trip() {
        let m = patient_split(&keys(13), &SplitSpec::default()).unwrap();
        let mut buf = Vec::new();
        write_split_file(&mut buf, &m).unwrap();
        assert_eq!(read_split_file(&buf[..]).unwrap(), m);
        assert!(read_split_file(&b"a\tholdout\n"[..]).is_err());
        assert!(read_split_file(&b"a train\n"[..]).is_err());
    }

    #[test]
    fn durations() {
        let s = duration_stats(&[(Split::Train, 3600.0), (Split::Train, 3600.0)]);
        assert_eq!(s[&Split::Train].mean_hours, 1.0);
        assert_eq!(s[&Split::Train].std_hours, 0.0);
        let s = duration_stats(&[(Split::Val, 9.0 * 3600.0), (Split::Val, 11.0 * 3600.0)]);
        assert_eq!(s[&Split::Val].mean_hours, 10.0);
        assert!(!s.contains_key(&Split::Test));
    }
}
