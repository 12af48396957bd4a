//! Rational-ratio resampling with a Kaiser-windowed sinc, polyphase form.
//!
//! For a ratio `to/from = L/M` (reduced), output sample `j` sits at input
//! position `j·M/L`. Its integer part picks the input neighbourhood and its
//! fractional part `p/L` picks one of `L` precomputed 64-tap phases. The
//! prototype low-pass cuts off at `min(from, to)/2`; each phase is scaled to
//! unit DC gain. Samples beyond either end are taken as zero.

pub const TAPS: usize = 64;
pub const KAISER_BETA: f64 = 8.6;
/// Phases above this count are evaluated on the fly instead of tabulated.
const MAX_TABLE_PHASES: u64 = 4096;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ResampleError {
    #[error("cannot resample an empty signal")]
    EmptySignal,
    #[error("sampling rates must be positive and finite (from {from_hz}, to {to_hz})")]
    BadRate { from_hz: f64, to_hz: f64 },
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `to/from` as a reduced `(L, M)`, with rates read at millihertz precision.
fn rational_ratio(from_hz: f64, to_hz: f64) -> (u64, u64) {
    let f = (from_hz * 1000.0).round().max(1.0) as u64;
    let t = (to_hz * 1000.0).round().max(1.0) as u64;
    let g = gcd(f, t);
    (t / g, f / g)
}

struct Kernel {
    cutoff: f64,
    i0_beta: f64,
}

impl Kernel {
    fn new(up: u64, down: u64) -> Self {
        Self { cutoff: (up as f64 / down as f64).min(1.0), i0_beta: bessel_i0(KAISER_BETA) }
    }

    /// Unit-DC-gain taps for fractional offset `frac`; tap `i` weights input `base + i - 31`.
    fn phase(&self, frac: f64) -> [f64; TAPS] {
        let half = TAPS as f64 / 2.0;
        let mut taps = [0.0; TAPS];
        for (i, t) in taps.iter_mut().enumerate() {
            let tau = (i as f64 - (half - 1.0)) - frac;
            let x = self.cutoff * tau;
            let sinc =
                if x.abs() < 1e-12 { 1.0 } else { (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x) };
            let r = tau / half;
            let w = if r.abs() <= 1.0 { bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta } else { 0.0 };
            *t = sinc * w;
        }
        let s: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= s;
        }
        taps
    }
}

/// Output length `round(n · to/from)`.
pub fn output_len(n: usize, from_hz: f64, to_hz: f64) -> usize {
    (n as f64 * to_hz / from_hz).round() as usize
}

pub fn resample(signal: &[f64], from_hz: f64, to_hz: f64) -> Result<Vec<f64>, ResampleError> {
    if signal.is_empty() {
        return Err(ResampleError::EmptySignal);
    }
    let ok = |r: f64| r.is_finite() && r > 0.0;
    if !ok(from_hz) || !ok(to_hz) {
        return Err(ResampleError::BadRate { from_hz, to_hz });
    }
    if from_hz == to_hz {
        return Ok(signal.to_vec());
    }
    let (up, down) = rational_ratio(from_hz, to_hz);
    let kernel = Kernel::new(up, down);
    let table: Option<Vec<[f64; TAPS]>> =
        (up <= MAX_TABLE_PHASES).then(|| (0..up).map(|p| kernel.phase(p as f64 / up as f64)).collect());
    let n = signal.len() as i64;
    let out_len = output_len(signal.len(), from_hz, to_hz);
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len as u64 {
        let pos = j * down;
        let base = (pos / up) as i64;
        let p = pos % up;
        let computed;
        let taps = match &table {
            Some(t) => &t[p as usize],
            None => {
                computed = kernel.phase(p as f64 / up as f64);
                &computed
            }
        };
        let first = base - (TAPS as i64 / 2 - 1);
        let mut acc = 0.0;
        for (i, &c) in taps.iter().enumerate() {
            let k = first + i as i64;
            if (0..n).contains(&k) {
                acc += c * signal[k as usize];
            }
        }
        out.push(acc);
    }
    Ok(out)
}
