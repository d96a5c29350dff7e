//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::Instant;

use fdn_peq::digitize::{digitization_error, Digitizer};
use fdn_peq::eval::{op_count, run_campaign, synthetic_curves, CampaignConfig, CostReport};
use fdn_peq::fdn::{broadband_t60, coprime_delays, default_duration, render_ir, schroeder_t60, FdnConfig};
use fdn_peq::optim::{loss_and_gradient, FitConfig, FitReport, ParamVector};
use fdn_peq::{
    fit, load_t60_table, peq_log_magnitude, BandKind, BandParams, FittedPeq, FrequencyGrid, PeqParams, T60Curve,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 48000.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_band(rng: &mut ChaCha8Rng, kind: BandKind) -> BandParams {
    let fc = rng.gen_range(30f64.ln()..18000f64.ln()).exp();
    let q = rng.gen_range(0.3f64.ln()..10f64.ln()).exp();
    BandParams::new(kind, fc, rng.gen_range(-30.0..6.0), q).unwrap()
}

fn random_bands(rng: &mut ChaCha8Rng, n: usize) -> Vec<BandParams> {
    (0..n)
        .map(|i| {
            let kind = if i == 0 {
                BandKind::LowShelf
            } else if i == n - 1 {
                BandKind::HighShelf
            } else {
                BandKind::Bell
            };
            random_band(rng, kind)
        })
        .collect()
}

fn cost_table() -> Outcome {
    let expected = [(4, 36, 12), (8, 72, 24), (12, 108, 36)];
    let ok = expected.iter().all(|&(n, op, p)| op_count(n) == CostReport { op, p });
    outcome(ok, "OP/P for N = 4, 8, 12 are 36/12, 72/24, 108/36")
}

fn gradients() -> Outcome {
    let grid = FrequencyGrid::for_sample_rate(FS, 512).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(3..=12);
        let p = ParamVector::from_bands(&random_bands(&mut rng, n)).unwrap();
        let target = peq_log_magnitude(&PeqParams::from_unordered(random_bands(&mut rng, n)).unwrap(), grid.freqs())
            .unwrap();
        let (_, grad) = loss_and_gradient(&p, &target, &grid).unwrap();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        for (i, &g) in grad.iter().enumerate() {
            let x = p.as_slice()[i];
            let h = 1e-6 * x.abs().max(1.0);
            let loss_at = |v: f64| {
                let mut q = p.as_slice().to_vec();
                q[i] = v;
                loss_and_gradient(&ParamVector::from_raw(q).unwrap(), &target, &grid).unwrap().0
            };
            let fd = (loss_at(x + h) - loss_at(x - h)) / (2.0 * h);
            worst = worst.max((fd - g).abs() / g.abs().max(1e-6 * norm));
        }
    }
    outcome(worst <= 1e-4, format!("worst relative error {worst:.2e} over 100 draws (bound 1e-4)"))
}

fn prototype_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut rel = |got: f64, want: f64| worst = worst.max((got - want).abs() / want);
    for _ in 0..1000 {
        let bell = random_band(&mut rng, BandKind::Bell);
        let lo = random_band(&mut rng, BandKind::LowShelf);
        let hi = random_band(&mut rng, BandKind::HighShelf);
        let far = |b: &BandParams| b.fc * 1e6;
        rel(bell.magnitude(bell.fc).unwrap(), 10f64.powf(bell.gain_db / 20.0));
        rel(bell.magnitude(0.0).unwrap(), 1.0);
        rel(bell.magnitude(far(&bell)).unwrap(), 1.0);
        rel(lo.magnitude(0.0).unwrap(), 10f64.powf(lo.gain_db / 20.0));
        rel(lo.magnitude(far(&lo)).unwrap(), 1.0);
        rel(hi.magnitude(far(&hi)).unwrap(), 10f64.powf(hi.gain_db / 20.0));
        rel(hi.magnitude(0.0).unwrap(), 1.0);
    }
    outcome(worst <= 1e-6, format!("worst relative error {worst:.2e} over 1000 bands of each kind"))
}

fn median_fit(n: usize) -> (FittedPeq, FitReport) {
    let curve = load_t60_table(include_str!("../data/median_t60.csv")).unwrap();
    let mut cfg = FitConfig::new(n, FrequencyGrid::for_sample_rate(FS, 512).unwrap());
    cfg.log_every = 0;
    fit(&curve, 4800.0, FS, &cfg).unwrap()
}

fn fit_quality(fits: &[(usize, FittedPeq, FitReport)]) -> Outcome {
    let bound = |n| if n == 12 { 5e-3 } else { 1e-1 };
    let ok = fits.iter().all(|(n, _, r)| r.final_mse <= bound(*n));
    let detail = fits
        .iter()
        .map(|(n, _, r)| format!("N={n}: MSE {:.2e} (bound {:.0e}, {:.1} s)", r.final_mse, bound(*n), r.wall_time_s))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(ok, detail)
}

fn campaign_checks() -> (Outcome, Outcome) {
    let curves = synthetic_curves(50, 7, 0.3, 5.0, 3.0).unwrap();
    let mut p95 = Vec::new();
    let mut n4 = None;
    for n in [4, 8, 12] {
        let fit = FitConfig::new(n, FrequencyGrid::for_sample_rate(FS, 512).unwrap());
        let mut cfg = CampaignConfig::new(fit, FS);
        cfg.seed = 1;
        let result = run_campaign(&curves, &cfg).unwrap();
        p95.push(result.distribution.p95_abs);
        if n == 4 {
            n4 = Some(result);
        }
    }
    let monotone = p95[0] > p95[1] && p95[1] > p95[2];
    let n4 = n4.unwrap();
    let violating = n4.violating_curves();
    let envelope = violating.is_empty() && n4.failures == 0;
    (
        outcome(monotone, format!("p95 |error| {:.3}% > {:.3}% > {:.3}% for N = 4, 8, 12", p95[0], p95[1], p95[2])),
        outcome(
            envelope,
            format!(
                "N=4 max |error| {:.3}% over {} points, violating curves {:?}, failed fits {}",
                n4.distribution.max_abs, n4.distribution.points, violating, n4.failures
            ),
        ),
    )
}

fn digitization(fits: &[(usize, FittedPeq, FitReport)]) -> Outcome {
    let grid = FrequencyGrid::for_sample_rate(FS, 512).unwrap();
    let mut center = 0.0f64;
    let mut dev = 0.0f64;
    for (_, fitted, _) in fits {
        let e = digitization_error(&fitted.params, FS, grid.freqs(), Digitizer::default()).unwrap();
        center = center.max(e.max_center_rel_err);
        dev = dev.max(e.max_band_dev_low_db);
    }
    outcome(
        center <= 1e-6 && dev <= 0.5,
        format!("worst f_c mismatch {center:.2e} (bound 1e-6), worst band deviation below 0.7 Nyquist {dev:.3} dB (bound 0.5)"),
    )
}

fn end_to_end() -> Outcome {
    let delays = coprime_delays(8, 0.01, 0.3, FS).unwrap();
    let mut sorted = delays.clone();
    sorted.sort_unstable();
    let m_ref = ((sorted[3] + sorted[4]) as f64 / 2.0).round();
    let mut cfg = FitConfig::new(12, FrequencyGrid::for_sample_rate(FS, 512).unwrap());
    cfg.log_every = 0;
    let (fitted, _) = fit(&T60Curve::flat(1.0, 20.0, 20000.0).unwrap(), m_ref, FS, &cfg).unwrap();
    let fdn = FdnConfig::from_fit(&fitted, &delays, default_duration(1.0), 0, Digitizer::default()).unwrap();
    let ir = render_ir(&fdn).unwrap();
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for band in [250.0, 500.0, 1000.0, 2000.0, 4000.0] {
        let t = schroeder_t60(&ir, FS, band).unwrap().t60_s;
        worst = worst.max((t - 1.0).abs());
        detail.push(format!("{band}: {t:.3}"));
    }
    let broadband = broadband_t60(&ir, FS).unwrap().t60_s;
    outcome(
        worst <= 0.1,
        format!("octave T60 [{}] s, broadband {broadband:.3} s, worst deviation {:.1}%", detail.join(", "), worst * 100.0),
    )
}

fn determinism(first: &(usize, FittedPeq, FitReport)) -> Outcome {
    let (fitted, report) = median_fit(first.0);
    let same_trace = report.loss_trace.len() == first.2.loss_trace.len()
        && report.loss_trace.iter().zip(&first.2.loss_trace).all(|(a, b)| a.to_bits() == b.to_bits());
    let same_json = fitted.to_json().unwrap() == first.1.to_json().unwrap();
    outcome(
        same_trace && same_json,
        format!("N={} rerun: loss trace identical {same_trace}, fit JSON identical {same_json}", first.0),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {id} [{}] {name}: {} ({secs:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o, secs));
    };

    run(1, "cost table", &mut cost_table);
    run(2, "gradient correctness", &mut gradients);
    run(3, "prototype identities", &mut prototype_identities);
    let mut fits = Vec::new();
    run(4, "median fit quality", &mut || {
        fits = [12, 4]
            .into_iter()
            .map(|n| {
                let (f, r) = median_fit(n);
                (n, f, r)
            })
            .collect();
        fit_quality(&fits)
    });
    // Criteria 5 and 6 share one campaign; its runtime is reported under 5.
    let mut envelope = None;
    run(5, "band-count monotonicity", &mut || {
        let (monotone, env) = campaign_checks();
        envelope = Some(env);
        monotone
    });
    run(6, "±25% envelope", &mut || envelope.take().unwrap());
    run(7, "digitization accuracy", &mut || digitization(&fits));
    run(8, "end-to-end decay", &mut end_to_end);
    run(9, "determinism", &mut || determinism(&fits[0]));

    let failed: Vec<_> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
