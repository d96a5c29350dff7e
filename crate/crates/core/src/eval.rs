//! Evaluation protocol: relative T60 error distributions over fitted curves,
//! magnitude error metrics and per-line arithmetic cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{fit_target_db, FitConfig, LossModel, ParamVector};
use crate::peq::response_to_t60;
use crate::target::{interpolate_to_grid, target_magnitude, T60Curve};

/// Nominal third-octave band centers from 20 Hz to 20 kHz.
pub const THIRD_OCTAVE_CENTERS: [f64; 31] = [
    20.0, 25.0, 31.5, 40.0, 50.0, 63.0, 80.0, 100.0, 125.0, 160.0, 200.0, 250.0, 315.0, 400.0, 500.0, 630.0,
    800.0, 1000.0, 1250.0, 1600.0, 2000.0, 2500.0, 3150.0, 4000.0, 5000.0, 6300.0, 8000.0, 10000.0, 12500.0,
    16000.0, 20000.0,
];

/// Published figures for the 31-band two-stage attenuation filter, used as
/// comparison constants only.
pub mod reference {
    pub const TSAF31_OP: usize = 284;
    pub const TSAF31_P: usize = 33;
    pub const TSAF31_MSE_DB2: f64 = 1.9e-3;
    pub const TSAF31_MAX_ABS_DB: f64 = 1.2e-1;
}

/// `(target - achieved) / target * 100` per point.
pub fn t60_relative_error(target: &[f64], achieved: &[f64]) -> Result<Vec<f64>> {
    if target.len() != achieved.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} target vs {} achieved",
            target.len(),
            achieved.len()
        )));
    }
    target
        .iter()
        .zip(achieved)
        .map(|(&t, &a)| {
            if t > 0.0 {
                Ok((t - a) / t * 100.0)
            } else {
                Err(Error::InvalidArgument(format!("target T60 must be positive, got {t}")))
            }
        })
        .collect()
}

/// Mean squared error and maximum absolute error, both in dB terms.
pub fn magnitude_metrics(target_db: &[f64], pred_db: &[f64]) -> Result<(f64, f64)> {
    if target_db.len() != pred_db.len() || target_db.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} target vs {} predicted",
            target_db.len(),
            pred_db.len()
        )));
    }
    let (sq, max) = target_db
        .iter()
        .zip(pred_db)
        .fold((0.0, 0.0f64), |(sq, max), (t, p)| (sq + (t - p).powi(2), max.max((t - p).abs())));
    Ok((sq / target_db.len() as f64, max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    /// Multiplies plus additions per sample per delay line.
    pub op: usize,
    /// Trainable parameters.
    pub p: usize,
}

/// Five multiplies and four additions per biquad, three parameters per band.
pub fn op_count(n_bands: usize) -> CostReport {
    CostReport { op: 9 * n_bands, p: 3 * n_bands }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub points: usize,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
    pub p95_abs: f64,
    pub max_abs: f64,
}

impl ErrorDistribution {
    /// Histogram with `bin_width`-percent bins aligned to multiples of the
    /// width and covering every value.
    pub fn from_errors(errors: &[f64], bin_width: f64) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::InvalidArgument("no error points".into()));
        }
        if !(bin_width > 0.0) {
            return Err(Error::InvalidArgument(format!("bin width must be positive, got {bin_width}")));
        }
        if errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("non-finite error point".into()));
        }
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
        abs.sort_by(f64::total_cmp);

        let lo = (sorted[0] / bin_width).floor() as i64;
        let mut hi = (sorted[sorted.len() - 1] / bin_width).floor() as i64 + 1;
        if hi <= lo {
            hi = lo + 1;
        }
        let n_bins = (hi - lo) as usize;
        let mut counts = vec![0usize; n_bins];
        for &e in errors {
            let idx = ((e / bin_width).floor() as i64 - lo).clamp(0, n_bins as i64 - 1);
            counts[idx as usize] += 1;
        }
        let bin_edges = (lo..=hi).map(|k| k as f64 * bin_width).collect();
        Ok(Self {
            bin_edges,
            counts,
            points: errors.len(),
            median: percentile(&sorted, 50.0),
            p5: percentile(&sorted, 5.0),
            p95: percentile(&sorted, 95.0),
            p95_abs: percentile(&abs, 95.0),
            max_abs: abs[abs.len() - 1],
        })
    }

    /// `bin_lo_pct,bin_hi_pct,count`
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lo_pct,bin_hi_pct,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.bin_edges[i], self.bin_edges[i + 1], c));
        }
        out
    }
}

/// Linear interpolation between closest ranks of sorted data.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub fit: FitConfig,
    pub fs: f64,
    /// Delay line length range in seconds, drawn uniformly per curve.
    pub delay_range_s: (f64, f64),
    pub seed: u64,
    /// Worker threads; `None` uses available parallelism.
    pub workers: Option<usize>,
    pub bin_width_pct: f64,
}

impl CampaignConfig {
    pub fn new(fit: FitConfig, fs: f64) -> Self {
        Self { fit, fs, delay_range_s: (0.01, 0.3), seed: 0, workers: None, bin_width_pct: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub name: String,
    pub delay_samples: f64,
    pub final_mse: Option<f64>,
    pub max_abs_error_pct: Option<f64>,
    pub p95_abs_error_pct: Option<f64>,
    /// Every grid point within ±25 %.
    pub within_25pct: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub n_bands: usize,
    pub grid_points: usize,
    pub distribution: ErrorDistribution,
    pub curves: Vec<CurveReport>,
    pub failures: usize,
    pub cost: CostReport,
}

impl CampaignResult {
    pub fn violating_curves(&self) -> Vec<&str> {
        self.curves.iter().filter(|c| !c.within_25pct).map(|c| c.name.as_str()).collect()
    }

    /// Summary document without the histogram body.
    pub fn summary_json(&self) -> Result<String> {
        let d = &self.distribution;
        let v = serde_json::json!({
            "n_bands": self.n_bands,
            "curves": self.curves.len(),
            "failures": self.failures,
            "grid_points": self.grid_points,
            "points": d.points,
            "median_pct": d.median,
            "p5_pct": d.p5,
            "p95_pct": d.p95,
            "p95_abs_pct": d.p95_abs,
            "max_abs_pct": d.max_abs,
            "within_25pct": self.violating_curves().is_empty(),
            "violating_curves": self.violating_curves(),
            "op": self.cost.op,
            "p": self.cost.p,
            "reference_tsaf31": {
                "op": reference::TSAF31_OP,
                "p": reference::TSAF31_P,
                "mse_db2": reference::TSAF31_MSE_DB2,
                "max_abs_db": reference::TSAF31_MAX_ABS_DB,
            },
            "per_curve": self.curves,
        });
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Delay in samples for curve `index`, independent of evaluation order.
pub fn campaign_delay(seed: u64, index: usize, range_s: (f64, f64), fs: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let seconds = if range_s.1 > range_s.0 { rng.gen_range(range_s.0..=range_s.1) } else { range_s.0 };
    (seconds * fs).round().max(1.0)
}

struct CurveOutcome {
    report: CurveReport,
    errors: Vec<f64>,
}

fn evaluate_curve(name: &str, curve: &T60Curve, index: usize, cfg: &CampaignConfig) -> CurveOutcome {
    let m = campaign_delay(cfg.seed, index, cfg.delay_range_s, cfg.fs);
    let mut report = CurveReport {
        name: name.to_string(),
        delay_samples: m,
        final_mse: None,
        max_abs_error_pct: None,
        p95_abs_error_pct: None,
        within_25pct: false,
        failure: None,
    };
    let run = || -> Result<(f64, Vec<f64>)> {
        let t60 = interpolate_to_grid(curve, &cfg.fit.grid);
        let target_db = target_magnitude(&t60, m, cfg.fs)?;
        let (fitted, fit_report) = fit_target_db(&target_db, m, cfg.fs, &cfg.fit)?;
        let mut model = LossModel::new(&cfg.fit.grid, &target_db)?;
        let response = model.response(&ParamVector::from_peq(&fitted.params)?)?.to_vec();
        let achieved = response_to_t60(&response, m, cfg.fs)?;
        Ok((fit_report.final_mse, t60_relative_error(&t60, &achieved)?))
    };
    match run() {
        Ok((mse, errors)) => {
            let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
            abs.sort_by(f64::total_cmp);
            let max = abs[abs.len() - 1];
            report.final_mse = Some(mse);
            report.max_abs_error_pct = Some(max);
            report.p95_abs_error_pct = Some(percentile(&abs, 95.0));
            report.within_25pct = max <= 25.0;
            CurveOutcome { report, errors }
        }
        Err(e) => {
            log::warn!("curve {name}: {e}");
            report.failure = Some(e.to_string());
            CurveOutcome { report, errors: Vec::new() }
        }
    }
}

/// Fits every curve at its own random delay and pools the relative T60
/// errors of all grid points.
pub fn run_campaign(curves: &[(String, T60Curve)], cfg: &CampaignConfig) -> Result<CampaignResult> {
    if curves.is_empty() {
        return Err(Error::InvalidArgument("campaign needs at least one curve".into()));
    }
    cfg.fit.validate()?;
    let mut fit_cfg = cfg.clone();
    fit_cfg.fit.log_every = 0;
    fit_cfg.fit.seed = cfg.seed;
    let work = || -> Vec<CurveOutcome> {
        curves
            .par_iter()
            .enumerate()
            .map(|(i, (name, curve))| evaluate_curve(name, curve, i, &fit_cfg))
            .collect()
    };
    let outcomes = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?
            .install(work),
        None => work(),
    };

    let failures = outcomes.iter().filter(|o| o.report.failure.is_some()).count();
    if failures * 10 > curves.len() {
        return Err(Error::CampaignAborted { failed: failures, total: curves.len() });
    }
    let errors: Vec<f64> = outcomes.iter().flat_map(|o| o.errors.iter().copied()).collect();
    let distribution = ErrorDistribution::from_errors(&errors, cfg.bin_width_pct)?;
    Ok(CampaignResult {
        n_bands: cfg.fit.n_bands,
        grid_points: cfg.fit.grid.len(),
        distribution,
        curves: outcomes.into_iter().map(|o| o.report).collect(),
        failures,
        cost: op_count(cfg.fit.n_bands),
    })
}

/// Smooth random room-like T60 curves on the third-octave centers.
///
/// `ln T60` is a random cubic in log frequency whose total swing is limited
/// to a random ratio between 1.5 and `max_ratio`, placed at a random level
/// that keeps every band inside `[t60_min, t60_max]`.
pub fn synthetic_curves(count: usize, seed: u64, t60_min: f64, t60_max: f64, max_ratio: f64) -> Result<Vec<(String, T60Curve)>> {
    if !(t60_min > 0.0 && t60_max > t60_min * max_ratio && max_ratio >= 1.5) {
        return Err(Error::InvalidArgument(format!(
            "cannot fit a ratio of {max_ratio} inside {t60_min}..{t60_max} s"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = THIRD_OCTAVE_CENTERS.iter().map(|f| (f / 1000.0).log2() / 5.0).collect();
    (0..count)
        .map(|i| {
            let c: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let shape: Vec<f64> = z.iter().map(|&z| c[0] * z + c[1] * z * z + c[2] * z * z * z).collect();
            let (lo, hi) = shape.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let swing = rng.gen_range(1.5f64.ln()..=max_ratio.ln());
            let scale = if hi > lo { (swing / (hi - lo)).min(1.0) } else { 0.0 };
            let (lo, hi) = (lo * scale, hi * scale);
            let level = rng.gen_range((t60_min.ln() - lo)..=(t60_max.ln() - hi));
            let points = THIRD_OCTAVE_CENTERS
                .iter()
                .zip(&shape)
                .map(|(&f, &s)| (f, (level + s * scale).exp()))
                .collect();
            Ok((format!("synthetic_{i:04}"), T60Curve::new(points)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::FrequencyGrid;

    #[test]
    fn relative_error_examples() {
        assert_eq!(t60_relative_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        let e = t60_relative_error(&[2.0], &[1.9]).unwrap();
        assert!((e[0] - 5.0).abs() < 1e-12);
        assert!(t60_relative_error(&[1.0], &[1.0, 2.0]).is_err());
        assert!(t60_relative_error(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn metrics() {
        assert_eq!(magnitude_metrics(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), (0.0, 0.0));
        let (mse, max) = magnitude_metrics(&[0.0, 0.0, 0.0], &[1.0, -2.0, 0.5]).unwrap();
        assert!((mse - 5.25 / 3.0).abs() < 1e-15);
        assert_eq!(max, 2.0);
        assert!(magnitude_metrics(&[0.0], &[]).is_err());
    }

    #[test]
    fn cost_table() {
        assert_eq!(op_count(4), CostReport { op: 36, p: 12 });
        assert_eq!(op_count(8), CostReport { op: 72, p: 24 });
        assert_eq!(op_count(12), CostReport { op: 108, p: 36 });
    }

    #[test]
    fn histogram_covers_everything() {
        let errors = [-3.2, -0.5, 0.0, 0.4, 0.99, 1.0, 7.5];
        let d = ErrorDistribution::from_errors(&errors, 1.0).unwrap();
        assert_eq!(d.counts.iter().sum::<usize>(), errors.len());
        assert_eq!(d.bin_edges.len(), d.counts.len() + 1);
        assert_eq!(d.bin_edges[0], -4.0);
        assert_eq!(*d.bin_edges.last().unwrap(), 8.0);
        assert_eq!(d.max_abs, 7.5);
        assert_eq!(d.median, 0.4);
        let csv = d.histogram_csv();
        assert!(csv.starts_with("bin_lo_pct,bin_hi_pct,count\n-4,-3,1\n"));
        let zeros = ErrorDistribution::from_errors(&[0.0; 5], 1.0).unwrap();
        assert_eq!(zeros.counts, vec![5]);
    }

    #[test]
    fn percentile_interpolates() {
        let s = [0.0, 10.0, 20.0, 30.0, 40.0];
        assert_eq!(percentile(&s, 50.0), 20.0);
        assert_eq!(percentile(&s, 95.0), 38.0);
        assert_eq!(percentile(&s, 100.0), 40.0);
    }

    #[test]
    fn delay_draws_are_order_independent() {
        let a = campaign_delay(9, 3, (0.01, 0.3), 48000.0);
        let b = campaign_delay(9, 3, (0.01, 0.3), 48000.0);
        assert_eq!(a, b);
        assert!((480.0..=14400.0).contains(&a));
        assert_ne!(campaign_delay(9, 4, (0.01, 0.3), 48000.0), a);
    }

    #[test]
    fn synthetic_curves_are_bounded() {
        let curves = synthetic_curves(200, 1, 0.3, 5.0, 3.0).unwrap();
        for (_, c) in &curves {
            assert_eq!(c.points().len(), 31);
            let (lo, hi) = c.points().iter().fold((f64::MAX, 0f64), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
            assert!(lo >= 0.3 * (1.0 - 1e-12) && hi <= 5.0 * (1.0 + 1e-12));
            assert!(hi / lo <= 3.0 * (1.0 + 1e-9));
        }
        assert_eq!(synthetic_curves(5, 1, 0.3, 5.0, 3.0).unwrap()[..], curves[..5]);
    }

    fn small_cfg(n: usize) -> CampaignConfig {
        let mut fit = FitConfig::new(n, FrequencyGrid::for_sample_rate(48000.0, 64).unwrap());
        fit.iterations = 400;
        CampaignConfig::new(fit, 48000.0)
    }

    #[test]
    fn flat_curve_campaign_is_near_zero() {
        let curves = vec![("flat".to_string(), T60Curve::flat(1.2, 20.0, 20000.0).unwrap())];
        let mut cfg = small_cfg(4);
        cfg.fit.iterations = 3000;
        let r = run_campaign(&curves, &cfg).unwrap();
        assert_eq!(r.distribution.points, 64);
        assert!(r.distribution.max_abs < 1.0, "{:?}", r.distribution);
    }

    #[test]
    fn campaign_is_deterministic_across_worker_counts() {
        let curves = synthetic_curves(3, 5, 0.3, 5.0, 3.0).unwrap();
        let mut cfg = small_cfg(4);
        cfg.workers = Some(1);
        let a = run_campaign(&curves, &cfg).unwrap();
        cfg.workers = Some(3);
        let b = run_campaign(&curves, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.distribution.points, 3 * 64);
        assert!(run_campaign(&[], &cfg).is_err());
    }
}
