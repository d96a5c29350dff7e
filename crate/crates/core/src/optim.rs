//! MSE loss, exact gradients in the log-domain parameterization, Adam, and
//! the fitting loop.
//!
//! Parameters are optimized as `(ln f_c, G_dB, ln Q)` per band so that
//! frequency and Q stay positive whatever the step. Gradients are the
//! closed-form derivatives of the squared-term magnitude expressions; the
//! test suite checks them against central finite differences of
//! [`crate::peq::peq_log_magnitude`].

use std::f64::consts::{FRAC_1_SQRT_2, LN_10};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peq::{FittedPeq, PeqParams};
use crate::prototypes::{BandKind, BandParams};
use crate::target::{interpolate_to_grid, target_magnitude, FrequencyGrid, T60Curve};

/// dB per natural-log unit of power ratio.
const DB_PER_NEPER_POWER: f64 = 10.0 / LN_10;

pub const DEFAULT_ITERATIONS: usize = 10_000;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const INIT_LOW_SHELF_HZ: f64 = 80.0;
pub const INIT_HIGH_SHELF_HZ: f64 = 8000.0;
pub const DEFAULT_MAX_FC_RATIO: f64 = 0.5;
pub const MIN_FC_HZ: f64 = 1.0;

/// Flat parameter vector `[ln f_c; N] ++ [G_dB; N] ++ [ln Q; N]`.
///
/// Band kinds are positional: slot 0 is the low shelf, slot N-1 the high
/// shelf and everything between a bell.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn from_raw(values: Vec<f64>) -> Result<Self> {
        if values.len() < 9 || !values.len().is_multiple_of(3) {
            return Err(Error::InvalidArgument(format!(
                "parameter vector length must be 3N with N >= 3, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure { index });
        }
        Ok(Self(values))
    }

    pub fn from_bands(bands: &[BandParams]) -> Result<Self> {
        let n = bands.len();
        let mut v = vec![0.0; 3 * n];
        for (i, b) in bands.iter().enumerate() {
            b.validate()?;
            v[i] = b.fc.ln();
            v[n + i] = b.gain_db;
            v[2 * n + i] = b.q.ln();
        }
        Self::from_raw(v)
    }

    pub fn from_peq(params: &PeqParams) -> Result<Self> {
        Self::from_bands(params.bands())
    }

    pub fn n_bands(&self) -> usize {
        self.0.len() / 3
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn kind(&self, band: usize) -> BandKind {
        band_kind(band, self.n_bands())
    }

    /// Bands in slot order; frequencies may be unordered mid-optimization.
    pub fn to_bands(&self) -> Vec<BandParams> {
        let n = self.n_bands();
        (0..n)
            .map(|i| BandParams {
                kind: self.kind(i),
                fc: self.0[i].exp(),
                gain_db: self.0[n + i],
                q: self.0[2 * n + i].exp(),
            })
            .collect()
    }

    /// Bands as a validated PEQ with bells sorted by frequency.
    pub fn to_peq(&self) -> Result<PeqParams> {
        PeqParams::from_unordered(self.to_bands())
    }
}

fn band_kind(band: usize, n: usize) -> BandKind {
    if band == 0 {
        BandKind::LowShelf
    } else if band + 1 == n {
        BandKind::HighShelf
    } else {
        BandKind::Bell
    }
}

pub fn mse_loss(pred_db: &[f64], target_db: &[f64]) -> Result<f64> {
    if pred_db.len() != target_db.len() || pred_db.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} predicted vs {} target",
            pred_db.len(),
            target_db.len()
        )));
    }
    let sum: f64 = pred_db.iter().zip(target_db).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(sum / pred_db.len() as f64)
}

/// Reusable buffers for repeated loss/gradient evaluation on one grid.
#[derive(Debug, Clone)]
pub struct LossModel {
    freq_sq: Vec<f64>,
    target_db: Vec<f64>,
    pred: Vec<f64>,
    // Per-band partials, laid out [slot][grid point].
    jac: Vec<f64>,
}

impl LossModel {
    pub fn new(grid: &FrequencyGrid, target_db: &[f64]) -> Result<Self> {
        if grid.len() != target_db.len() {
            return Err(Error::InvalidArgument(format!(
                "target has {} points but grid has {}",
                target_db.len(),
                grid.len()
            )));
        }
        Ok(Self {
            freq_sq: grid.freqs().iter().map(|f| f * f).collect(),
            target_db: target_db.to_vec(),
            pred: vec![0.0; grid.len()],
            jac: Vec::new(),
        })
    }

    pub fn target_db(&self) -> &[f64] {
        &self.target_db
    }

    /// PEQ response of `p` on the grid, in dB.
    pub fn response(&mut self, p: &ParamVector) -> Result<&[f64]> {
        self.evaluate(p, false)?;
        Ok(&self.pred)
    }

    /// MSE against the target and its gradient with respect to `p`.
    pub fn loss_and_gradient(&mut self, p: &ParamVector, grad: &mut [f64]) -> Result<f64> {
        let n = p.n_bands();
        if grad.len() != 3 * n {
            return Err(Error::InvalidArgument("gradient buffer has wrong length".into()));
        }
        self.evaluate(p, true)?;
        let len = self.pred.len();
        let scale = 2.0 / len as f64;
        let mut loss = 0.0;
        for (pred, target) in self.pred.iter_mut().zip(&self.target_db) {
            // pred becomes the residual from here on.
            *pred -= target;
            loss += *pred * *pred;
        }
        loss /= len as f64;
        for (slot, g) in grad.iter_mut().enumerate() {
            let band = slot % n;
            let which = slot / n;
            let col = &self.jac[(3 * band + which) * len..(3 * band + which + 1) * len];
            *g = scale * col.iter().zip(&self.pred).map(|(d, r)| d * r).sum::<f64>();
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NumericalFailure { index });
        }
        if !loss.is_finite() {
            return Err(Error::NumericalFailure { index: 0 });
        }
        Ok(loss)
    }

    fn evaluate(&mut self, p: &ParamVector, with_jac: bool) -> Result<()> {
        let n = p.n_bands();
        let len = self.freq_sq.len();
        self.pred.iter_mut().for_each(|v| *v = 0.0);
        if with_jac {
            self.jac.resize(3 * n * len, 0.0);
        }
        let v = p.as_slice();
        for band in 0..n {
            let (lfc, gain, lq) = (v[band], v[n + band], v[2 * n + band]);
            let jac = if with_jac {
                Some(&mut self.jac[3 * band * len..3 * (band + 1) * len])
            } else {
                None
            };
            let ok = accumulate_band(band_kind(band, n), lfc, gain, lq, &self.freq_sq, &mut self.pred, jac);
            if !ok {
                return Err(Error::NumericalFailure { index: n + band });
            }
        }
        Ok(())
    }
}

/// Adds one band's dB response to `pred` and, when `jac` is given, writes
/// its partials with respect to `(ln f_c, G, ln Q)` as three consecutive
/// rows. Returns false if anything went non-finite.
fn accumulate_band(
    kind: BandKind,
    log_fc: f64,
    gain_db: f64,
    log_q: f64,
    freq_sq: &[f64],
    pred: &mut [f64],
    jac: Option<&mut [f64]>,
) -> bool {
    let len = freq_sq.len();
    let inv_fc_sq = (-2.0 * log_fc).exp();
    let w = (-2.0 * log_q).exp(); // 1/Q^2
    let a = (gain_db * LN_10 / 40.0).exp();
    let c = DB_PER_NEPER_POWER;
    let mut finite = true;
    let mut jac = jac.map(|j| {
        let (d_fc, rest) = j.split_at_mut(len);
        let (d_g, d_q) = rest.split_at_mut(len);
        (d_fc, d_g, d_q)
    });

    match kind {
        BandKind::Bell => {
            let a2 = a * a;
            let inv_a2 = 1.0 / a2;
            for i in 0..len {
                let u = freq_sq[i] * inv_fc_sq;
                let e = 1.0 - u;
                let e2 = e * e;
                let uw = u * w;
                let num = e2 + a2 * uw;
                let den = e2 + uw * inv_a2;
                let val = c * (num / den).ln();
                pred[i] += val;
                finite &= val.is_finite();
                if let Some((d_fc, d_g, d_q)) = jac.as_mut() {
                    let inv_n = 1.0 / num;
                    let inv_d = 1.0 / den;
                    let dn_du = -2.0 * e + a2 * w;
                    let dd_du = -2.0 * e + w * inv_a2;
                    d_fc[i] = c * (dn_du * inv_n - dd_du * inv_d) * (-2.0 * u);
                    // through a^2 = 10^(G/20): c * ln10/20 = 1/2
                    d_g[i] = 0.5 * uw * (a2 * inv_n + inv_a2 * inv_d);
                    d_q[i] = c * u * (a2 * inv_n - inv_a2 * inv_d) * (-2.0 * w);
                    finite &= d_fc[i].is_finite() && d_g[i].is_finite() && d_q[i].is_finite();
                }
            }
        }
        BandKind::LowShelf | BandKind::HighShelf => {
            // Both shelves share N = (A-u)^2 + A u w and D = (1-A u)^2 + A u w;
            // the high shelf is the reciprocal ratio.
            let sign = if kind == BandKind::LowShelf { 1.0 } else { -1.0 };
            let half_gain = 0.5 * gain_db;
            for i in 0..len {
                let u = freq_sq[i] * inv_fc_sq;
                let auw = a * u * w;
                let p = a - u;
                let r = 1.0 - a * u;
                let num = p * p + auw;
                let den = r * r + auw;
                let val = half_gain + sign * c * (num / den).ln();
                pred[i] += val;
                finite &= val.is_finite();
                if let Some((d_fc, d_g, d_q)) = jac.as_mut() {
                    let inv_n = 1.0 / num;
                    let inv_d = 1.0 / den;
                    let dn_du = -2.0 * p + a * w;
                    let dd_du = -2.0 * a * r + a * w;
                    let dn_da = 2.0 * p + u * w;
                    let dd_da = -2.0 * u * r + u * w;
                    d_fc[i] = sign * c * (dn_du * inv_n - dd_du * inv_d) * (-2.0 * u);
                    // dA/dG = A ln10/40, so c * dA/dG = A/4
                    d_g[i] = 0.5 + sign * 0.25 * a * (dn_da * inv_n - dd_da * inv_d);
                    d_q[i] = -2.0 * sign * c * auw * (inv_n - inv_d);
                    finite &= d_fc[i].is_finite() && d_g[i].is_finite() && d_q[i].is_finite();
                }
            }
        }
    }
    finite
}

/// One-shot convenience over [`LossModel`].
pub fn loss_and_gradient(p: &ParamVector, target_db: &[f64], grid: &FrequencyGrid) -> Result<(f64, Vec<f64>)> {
    let mut model = LossModel::new(grid, target_db)?;
    let mut grad = vec![0.0; p.as_slice().len()];
    let loss = model.loss_and_gradient(p, &mut grad)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grad.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: state {}, params {}, grad {}",
            state.m.len(),
            params.len(),
            grad.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub n_bands: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub grid: FrequencyGrid,
    /// Progress is logged every this many iterations; 0 disables it.
    pub log_every: usize,
    /// Upper bound on band frequencies as a fraction of Nyquist. Frequency
    /// slots are projected onto `[MIN_FC_HZ, max_fc_ratio * fs / 2]` after
    /// every step so the result can always be digitized.
    pub max_fc_ratio: f64,
}

impl FitConfig {
    pub fn new(n_bands: usize, grid: FrequencyGrid) -> Self {
        Self {
            n_bands,
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            grid,
            log_every: 500,
            max_fc_ratio: DEFAULT_MAX_FC_RATIO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bands < 3 {
            return Err(Error::InvalidArgument(format!("need at least 3 bands, got {}", self.n_bands)));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(self.max_fc_ratio > 0.0 && self.max_fc_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!("max_fc_ratio must be in (0, 1), got {}", self.max_fc_ratio)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_mse: f64,
    pub best_iteration: usize,
    pub iterations: usize,
    pub loss_trace_downsampled: Vec<f64>,
    pub wall_time_s: f64,
    pub seed: u64,
    /// Loss before every update plus the loss after the last one.
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
}

impl FitReport {
    /// Running minimum of the loss trace.
    pub fn best_loss_trace(&self) -> Vec<f64> {
        self.loss_trace
            .iter()
            .scan(f64::INFINITY, |best, &l| {
                *best = best.min(l);
                Some(*best)
            })
            .collect()
    }
}

/// Starting point: shelves at 80 Hz and 8 kHz, bells log-spaced between,
/// Q = 1/sqrt(2), each gain equal to the target at the band frequency.
pub fn initial_params(n_bands: usize, grid: &FrequencyGrid, target_db: &[f64]) -> Result<ParamVector> {
    if n_bands < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 bands, got {n_bands}")));
    }
    let (lo, hi) = (INIT_LOW_SHELF_HZ.ln(), INIT_HIGH_SHELF_HZ.ln());
    let bands: Vec<BandParams> = (0..n_bands)
        .map(|i| {
            let fc = (lo + (hi - lo) * i as f64 / (n_bands - 1) as f64).exp();
            BandParams {
                kind: band_kind(i, n_bands),
                fc,
                gain_db: sample_log_interp(grid.freqs(), target_db, fc),
                q: FRAC_1_SQRT_2,
            }
        })
        .collect();
    ParamVector::from_bands(&bands)
}

fn sample_log_interp(freqs: &[f64], values: &[f64], f: f64) -> f64 {
    let hi = freqs.partition_point(|&g| g < f);
    if hi == 0 {
        return values[0];
    }
    if hi == freqs.len() {
        return values[freqs.len() - 1];
    }
    let (f0, f1) = (freqs[hi - 1], freqs[hi]);
    let w = (f / f0).ln() / (f1 / f0).ln();
    values[hi - 1] + w * (values[hi] - values[hi - 1])
}

/// Fits the PEQ to a T60 curve at reference delay `m_ref` samples.
pub fn fit(target: &T60Curve, m_ref: f64, fs: f64, cfg: &FitConfig) -> Result<(FittedPeq, FitReport)> {
    let t60 = interpolate_to_grid(target, &cfg.grid);
    let target_db = target_magnitude(&t60, m_ref, fs)?;
    fit_target_db(&target_db, m_ref, fs, cfg)
}

/// Fits directly to a dB target sampled on `cfg.grid`.
pub fn fit_target_db(target_db: &[f64], m_ref: f64, fs: f64, cfg: &FitConfig) -> Result<(FittedPeq, FitReport)> {
    cfg.validate()?;
    if let Some(&f) = cfg.grid.freqs().last() {
        if f >= fs / 2.0 {
            return Err(Error::InvalidArgument(format!("grid reaches {f} Hz, at or above Nyquist")));
        }
    }
    let start = Instant::now();
    let mut model = LossModel::new(&cfg.grid, target_db)?;
    let mut params = initial_params(cfg.n_bands, &cfg.grid, target_db)?;
    let dim = params.as_slice().len();
    let mut adam = AdamState::new(dim, cfg.learning_rate);
    let mut grad = vec![0.0; dim];
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let log_fc_min = MIN_FC_HZ.ln();
    let log_fc_max = (cfg.max_fc_ratio * fs / 2.0).ln();

    for iteration in 0..=cfg.iterations {
        let loss = model
            .loss_and_gradient(&params, &mut grad)
            .map_err(|e| Error::Divergence { iteration, source: Box::new(e) })?;
        trace.push(loss);
        if loss < best.0 {
            best = (loss, params.clone(), iteration);
        }
        if cfg.log_every > 0 && iteration % cfg.log_every == 0 {
            log::info!("iteration {iteration}: loss {loss:.6e}, best {:.6e}", best.0);
        }
        if iteration == cfg.iterations {
            break;
        }
        adam_step(&mut adam, params.as_mut_slice(), &grad)?;
        let n = cfg.n_bands;
        for lfc in &mut params.as_mut_slice()[..n] {
            *lfc = lfc.clamp(log_fc_min, log_fc_max);
        }
    }

    let (best_loss, best_params, best_iteration) = best;
    let peq = best_params.to_peq()?;
    let fitted = FittedPeq::new(peq, m_ref, fs)?;
    let report = FitReport {
        final_mse: best_loss,
        best_iteration,
        iterations: cfg.iterations,
        loss_trace_downsampled: trace.iter().step_by(100).copied().collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
        loss_trace: trace,
    };
    Ok((fitted, report))
}
