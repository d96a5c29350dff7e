//! Feedback delay network rendering and Schroeder decay measurement.
//!
//! Each delay line output passes through its attenuation cascade, the
//! filtered signals are mixed by an orthogonal feedback matrix and written
//! back into the lines. The network output taps the delay line outputs.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digitize::{BiquadCoeffs, Digitizer, SosCascade};
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_atomic_with};
use crate::peq::{scale_to_delay, FittedPeq};

/// Square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("matrix must be square and non-empty".into()));
        }
        Ok(Self { n, data: rows.concat() })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    /// `max |(A Aᵀ - I)_ij|`
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| self.get(i, k) * self.get(j, k)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }
}

/// `I - (2/L) 1 1ᵀ`
pub fn householder_matrix(size: usize) -> Matrix {
    let n = size.max(1);
    let off = -2.0 / n as f64;
    let data = (0..n * n).map(|k| if k / n == k % n { 1.0 + off } else { off }).collect();
    Matrix { n, data }
}

#[derive(Debug, Clone)]
pub struct FdnConfig {
    pub delays: Vec<usize>,
    pub fs: f64,
    pub matrix: Matrix,
    pub cascades: Vec<SosCascade>,
    pub input_gains: Vec<f64>,
    pub output_gains: Vec<f64>,
    pub duration_s: f64,
}

impl FdnConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.delays.len();
        if l == 0 {
            return Err(Error::InvalidArgument("FDN needs at least one delay line".into()));
        }
        if self.delays.contains(&0) {
            return Err(Error::InvalidArgument("delay lengths must be >= 1 sample".into()));
        }
        let mut sorted = self.delays.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("delay lengths must be distinct".into()));
        }
        if self.matrix.size() != l || self.cascades.len() != l || self.input_gains.len() != l || self.output_gains.len() != l {
            return Err(Error::InvalidArgument(format!("FDN components must all have {l} lines")));
        }
        let ortho = self.matrix.orthogonality_error();
        if !(ortho < 1e-9) {
            return Err(Error::InvalidArgument(format!("feedback matrix is not orthogonal (error {ortho:.3e})")));
        }
        if self.cascades.iter().any(|c| c.fs() != self.fs) {
            return Err(Error::InvalidArgument("cascade sample rate differs from FDN".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidArgument(format!("render duration must be positive, got {}", self.duration_s)));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }

    /// Network whose line `k` uses the fit scaled to `delays[k]`, with a
    /// Householder matrix, unit input gains and seeded ±1 output gains.
    pub fn from_fit(
        fitted: &FittedPeq,
        delays: &[usize],
        duration_s: f64,
        seed: u64,
        digitizer: Digitizer,
    ) -> Result<Self> {
        let cascades = delays
            .iter()
            .map(|&m| {
                let params = scale_to_delay(fitted, m as f64)?;
                crate::digitize::peq_to_sos_with(&params, fitted.fs, digitizer)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let output_gains = delays.iter().map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let cfg = Self {
            delays: delays.to_vec(),
            fs: fitted.fs,
            matrix: householder_matrix(delays.len()),
            cascades,
            input_gains: vec![1.0; delays.len()],
            output_gains,
            duration_s,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Default render length: twice the longest T60, capped at 10 s.
pub fn default_duration(max_t60: f64) -> f64 {
    (2.0 * max_t60).min(10.0)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `count` delay lengths log-spaced over `[min_s, max_s]`, each nudged to the
/// nearest integer coprime with all earlier ones.
pub fn coprime_delays(count: usize, min_s: f64, max_s: f64, fs: f64) -> Result<Vec<usize>> {
    if count == 0 || !(min_s > 0.0 && max_s >= min_s) {
        return Err(Error::InvalidArgument(format!("bad delay preset: {count} lines over {min_s}..{max_s} s")));
    }
    let mut out: Vec<usize> = Vec::with_capacity(count);
    for i in 0..count {
        let frac = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
        let seconds = min_s * (max_s / min_s).powf(frac);
        let base = (seconds * fs).round().max(1.0) as i64;
        let candidate = (0i64..)
            .flat_map(|d| [base + d, base - d])
            .filter(|&c| c >= 1)
            .map(|c| c as usize)
            .find(|&c| out.iter().all(|&m| m != c && gcd(m, c) == 1))
            .expect("coprime search is unbounded");
        out.push(candidate);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct SectionState {
    c: BiquadCoeffs,
    s1: f64,
    s2: f64,
}

impl SectionState {
    fn new(c: BiquadCoeffs) -> Self {
        Self { c, s1: 0.0, s2: 0.0 }
    }

    /// Transposed direct form II.
    #[inline]
    fn process(&mut self, x: f64) -> f64 {
        let y = self.c.b0 * x + self.s1;
        self.s1 = self.c.b1 * x - self.c.a1 * y + self.s2;
        self.s2 = self.c.b2 * x - self.c.a2 * y;
        y
    }
}

/// Filters `x` through a chain of sections.
pub fn filter(sections: &[BiquadCoeffs], x: &[f64]) -> Vec<f64> {
    let mut states: Vec<SectionState> = sections.iter().copied().map(SectionState::new).collect();
    x.iter()
        .map(|&v| states.iter_mut().fold(v, |acc, s| s.process(acc)))
        .collect()
}

/// Impulse response of the network, `duration_s * fs` samples.
pub fn render_ir(cfg: &FdnConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let l = cfg.delays.len();
    let total = cfg.num_samples();
    let mut lines: Vec<Vec<f64>> = cfg.delays.iter().map(|&m| vec![0.0; m]).collect();
    let mut heads = vec![0usize; l];
    let mut filters: Vec<Vec<SectionState>> = cfg
        .cascades
        .iter()
        .map(|c| c.sections().iter().copied().map(SectionState::new).collect())
        .collect();
    let mut taps = vec![0.0; l];
    let mut out = Vec::with_capacity(total);

    for n in 0..total {
        let input = if n == 0 { 1.0 } else { 0.0 };
        let mut y = 0.0;
        for k in 0..l {
            let s = lines[k][heads[k]];
            y += cfg.output_gains[k] * s;
            taps[k] = filters[k].iter_mut().fold(s, |acc, st| st.process(acc));
        }
        if !y.is_finite() {
            return Err(Error::Instability { sample: n });
        }
        out.push(y);
        for k in 0..l {
            let fed: f64 = (0..l).map(|j| cfg.matrix.get(k, j) * taps[j]).sum();
            lines[k][heads[k]] = cfg.input_gains[k] * input + fed;
            heads[k] = (heads[k] + 1) % cfg.delays[k];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayMeasurement {
    /// Octave band center in Hz, `None` for broadband.
    pub band_hz: Option<f64>,
    pub t60_s: f64,
    pub fit_range_db: (f64, f64),
    /// RMS deviation of the energy decay curve from the regression line, dB.
    pub residual_db: f64,
}

pub const DECAY_FIT_START_DB: f64 = -5.0;
pub const DECAY_FIT_END_DB: f64 = -25.0;

/// Fourth-order octave band: second-order Butterworth high-pass at
/// `center/√2` followed by a second-order Butterworth low-pass at `center·√2`.
pub fn octave_band_filter(center_hz: f64, fs: f64) -> Result<[BiquadCoeffs; 2]> {
    let hi = center_hz * SQRT_2;
    if !(center_hz > 0.0 && hi < fs / 2.0) {
        return Err(Error::InvalidArgument(format!("octave band at {center_hz} Hz does not fit below Nyquist")));
    }
    let section = |fc: f64, high_pass: bool| {
        let w0 = 2.0 * PI * fc / fs;
        let (c, alpha) = (w0.cos(), w0.sin() / (2.0 * FRAC_1_SQRT_2));
        let a0 = 1.0 + alpha;
        let (b0, b1) = if high_pass { ((1.0 + c) / 2.0, -(1.0 + c)) } else { ((1.0 - c) / 2.0, 1.0 - c) };
        BiquadCoeffs { b0: b0 / a0, b1: b1 / a0, b2: b0 / a0, a1: -2.0 * c / a0, a2: (1.0 - alpha) / a0, fs }
    };
    Ok([section(center_hz / SQRT_2, true), section(hi, false)])
}

/// Normalized backward-integrated energy decay curve in dB.
pub fn energy_decay_curve(ir: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = ir
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter().map(|&e| 10.0 * (e / total).log10()).collect()
}

/// T60 of one octave band of `ir`.
pub fn schroeder_t60(ir: &[f64], fs: f64, band_hz: f64) -> Result<DecayMeasurement> {
    let filtered = filter(&octave_band_filter(band_hz, fs)?, ir);
    let mut m = decay_from_signal(&filtered, fs)?;
    m.band_hz = Some(band_hz);
    Ok(m)
}

/// T60 of the unfiltered signal.
pub fn broadband_t60(ir: &[f64], fs: f64) -> Result<DecayMeasurement> {
    decay_from_signal(ir, fs)
}

fn decay_from_signal(x: &[f64], fs: f64) -> Result<DecayMeasurement> {
    let required_db = -DECAY_FIT_END_DB;
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if !(energy > 0.0 && energy.is_finite()) {
        return Err(Error::InsufficientDecay { span_db: 0.0, required_db });
    }
    let edc = energy_decay_curve(x);
    let span_db = -edc.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::min);
    let start = edc.iter().position(|&v| v <= DECAY_FIT_START_DB);
    let end = edc.iter().position(|&v| v <= DECAY_FIT_END_DB);
    let (Some(start), Some(end)) = (start, end) else {
        return Err(Error::InsufficientDecay { span_db, required_db });
    };
    // Leave at least a few points for the regression.
    if end < start + 2 {
        return Err(Error::InsufficientDecay { span_db, required_db });
    }
    let pts = (start..=end).map(|i| (i as f64 / fs, edc[i]));
    let n = (end - start + 1) as f64;
    let (sx, sy, sxx, sxy) = pts.clone().fold((0.0, 0.0, 0.0, 0.0), |(sx, sy, sxx, sxy), (t, y)| {
        (sx + t, sy + y, sxx + t * t, sxy + t * y)
    });
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    if !(slope < 0.0) {
        return Err(Error::InsufficientDecay { span_db, required_db });
    }
    let residual = (pts.map(|(t, y)| (y - intercept - slope * t).powi(2)).sum::<f64>() / n).sqrt();
    Ok(DecayMeasurement {
        band_hz: None,
        t60_s: -60.0 / slope,
        fit_range_db: (DECAY_FIT_START_DB, DECAY_FIT_END_DB),
        residual_db: residual,
    })
}

/// 32-bit float mono WAV.
pub fn write_wav(path: &Path, samples: &[f64], fs: f64) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: fs.round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    write_atomic_with(path, |file| {
        let mut w = hound::WavWriter::new(BufWriter::new(file), spec).map_err(std::io::Error::other)?;
        for &s in samples {
            w.write_sample(s as f32).map_err(std::io::Error::other)?;
        }
        w.finalize().map_err(std::io::Error::other)
    })
}

/// `band_hz,t60_s,residual` rows; the broadband row has an empty band.
pub fn decay_csv(measurements: &[DecayMeasurement]) -> String {
    let mut out = String::from("band_hz,t60_s,residual\n");
    for m in measurements {
        let band = m.band_hz.map(|b| b.to_string()).unwrap_or_default();
        out.push_str(&format!("{band},{},{}\n", m.t60_s, m.residual_db));
    }
    out
}

pub fn write_decay_csv(path: &Path, measurements: &[DecayMeasurement]) -> Result<()> {
    write_atomic(path, decay_csv(measurements).as_bytes())
}
