use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::EvalError;
use crate::dataset::rng::SplitMix64;
use crate::stage::{Stage, NUM_STAGES};

pub const HYPNOGRAM_HEADER: &str = "epoch_index,true_stage,predicted_stage";

/// Counts with true stages as rows: `true,W,N1,N2,N3,REM`.
pub fn write_confusion_csv(mut w: impl Write, cm: &super::ConfusionMatrix) -> std::io::Result<()> {
    let names: Vec<&str> = Stage::ALL.iter().map(|s| s.short_name()).collect();
    writeln!(w, "true,{}", names.join(","))?;
    for (stage, row) in Stage::ALL.iter().zip(&cm.counts) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(w, "{},{}", stage.short_name(), cells.join(","))?;
    }
    Ok(())
}

/// One study's scored epochs in temporal order.
#[derive(Clone, Debug, PartialEq)]
pub struct HypnogramRow {
    pub epoch_index: u32,
    pub truth: Stage,
    pub predicted: Stage,
}

/// CSV with header [`HYPNOGRAM_HEADER`]; stages as `W`, `N1`, `N2`, `N3`, `REM`.
pub fn write_hypnogram_csv(mut w: impl Write, rows: &[HypnogramRow]) -> std::io::Result<()> {
    writeln!(w, "{HYPNOGRAM_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.epoch_index, r.truth.short_name(), r.predicted.short_name())?;
    }
    Ok(())
}

pub fn read_hypnogram_csv(r: impl BufRead) -> Result<Vec<HypnogramRow>, EvalError> {
    let mut lines = r.lines();
    match lines.next().transpose()? {
        Some(h) if h == HYPNOGRAM_HEADER => {}
        other => return Err(EvalError::Format(format!("hypnogram header {other:?}"))),
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        let bad = || EvalError::Format(format!("hypnogram line {}: {line:?}", n + 2));
        if f.len() != 3 {
            return Err(bad());
        }
        out.push(HypnogramRow {
            epoch_index: f[0].parse().map_err(|_| bad())?,
            truth: Stage::from_short_name(f[1]).ok_or_else(bad)?,
            predicted: Stage::from_short_name(f[2]).ok_or_else(bad)?,
        });
    }
    Ok(out)
}

/// Two stepped traces, scorer above and model below, stage axis W at the
/// top down to REM at the bottom.
pub fn hypnogram_svg(rows: &[HypnogramRow]) -> String {
    let (left, width, track, gap) = (50.0, 900.0, 100.0, 40.0);
    let step = if rows.is_empty() { 0.0 } else { width / rows.len() as f64 };
    let height = 2.0 * track + 3.0 * gap;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="10">"#,
        left + width + 10.0
    );
    for (t, (title, pick)) in [("scorer", 0usize), ("model", 1)].iter().enumerate() {
        let top = gap + t as f64 * (track + gap);
        let y = |st: Stage| top + st.index() as f64 * track / (NUM_STAGES - 1) as f64;
        let _ = writeln!(s, r#"<text x="{left}" y="{}">{title}</text>"#, top - 8.0);
        for st in Stage::ALL {
            let _ = writeln!(s, r#"<text x="5" y="{:.1}">{}</text>"#, y(st) + 3.0, st.short_name());
        }
        let mut path = String::new();
        for (i, r) in rows.iter().enumerate() {
            let st = if *pick == 0 { r.truth } else { r.predicted };
            let x0 = left + i as f64 * step;
            let cmd = if i == 0 { 'M' } else { 'L' };
            let _ = write!(path, "{cmd}{x0:.1},{:.1} L{:.1},{:.1} ", y(st), x0 + step, y(st));
        }
        if !path.is_empty() {
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="black"/>"#, path.trim_end());
        }
    }
    s.push_str("</svg>\n");
    s
}

/// `k` distinct indices from `0..n` (all when `k >= n`), sorted, chosen by
/// a SplitMix64 shuffle.
pub fn subsample(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        SplitMix64::new(seed).shuffle(&mut idx);
        idx.truncate(k);
        idx.sort_unstable();
    }
    idx
}

/// Feature rows as CSV: `f0, …, f{d-1}, label`.
pub fn write_features_csv(mut w: impl Write, rows: &[(Vec<f32>, Stage)]) -> std::io::Result<()> {
    let d = rows.first().map_or(0, |r| r.0.len());
    let header: Vec<String> = (0..d).map(|i| format!("f{i}")).chain(std::iter::once("label".to_string())).collect();
    writeln!(w, "{}", header.join(","))?;
    for (f, label) in rows {
        let mut line = String::with_capacity(f.len() * 12);
        for v in f {
            let _ = write!(line, "{v},");
        }
        let _ = write!(line, "{}", label.index());
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypnogram_round_trip() {
        let rows: Vec<HypnogramRow> = [Stage::Wake, Stage::N2, Stage::Rem]
            .iter()
            .enumerate()
            .map(|(i, &s)| HypnogramRow { epoch_index: i as u32, truth: s, predicted: s })
            .collect();
        let mut buf = Vec::new();
        write_hypnogram_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "epoch_index,true_stage,predicted_stage\n0,W,W\n1,N2,N2\n2,REM,REM\n"
        );
        assert_eq!(read_hypnogram_csv(&buf[..]).unwrap(), rows);
        assert!(hypnogram_svg(&rows).contains("<path"));
    }

    #[test]
    fn empty_hypnogram_is_header_only() {
        let mut buf = Vec::new();
        write_hypnogram_csv(&mut buf, &[]).unwrap();
        assert_eq!(buf, b"epoch_index,true_stage,predicted_stage\n");
        assert!(read_hypnogram_csv(&buf[..]).unwrap().is_empty());
        assert!(hypnogram_svg(&[]).ends_with("</svg>\n"));
    }

    #[test]
    fn subsample_is_seeded() {
        assert_eq!(subsample(100, 10, 4), subsample(100, 10, 4));
        assert_eq!(subsample(100, 10, 4).len(), 10);
        assert_eq!(subsample(5, 10, 4), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn features_shape() {
        let rows: Vec<(Vec<f32>, Stage)> = (0..10).map(|i| (vec![i as f32; 128], Stage::N3)).collect();
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 11);
        assert!(lines.iter().all(|l| l.split(',').count() == 129));
    }
}
