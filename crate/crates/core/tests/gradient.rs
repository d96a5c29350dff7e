use fdn_peq::eval::synthetic_curves;
use fdn_peq::optim::{fit, fit_target_db, loss_and_gradient, FitConfig, ParamVector};
use fdn_peq::{peq_log_magnitude, scale_to_delay, BandKind, BandParams, FrequencyGrid, PeqParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_bands(rng: &mut ChaCha8Rng, n: usize) -> Vec<BandParams> {
    (0..n)
        .map(|i| {
            let kind = match i {
                0 => BandKind::LowShelf,
                i if i == n - 1 => BandKind::HighShelf,
                _ => BandKind::Bell,
            };
            let fc = (rng.gen_range(30f64.ln()..18000f64.ln())).exp();
            let q = (rng.gen_range(0.3f64.ln()..10f64.ln())).exp();
            BandParams::new(kind, fc, rng.gen_range(-30.0..6.0), q).unwrap()
        })
        .collect()
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let grid = FrequencyGrid::for_sample_rate(48000.0, 512).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for draw in 0..120 {
        let n = rng.gen_range(3..=12);
        let p = ParamVector::from_bands(&random_bands(&mut rng, n)).unwrap();
        let target_bands = PeqParams::from_unordered(random_bands(&mut rng, n)).unwrap();
        let target = peq_log_magnitude(&target_bands, grid.freqs()).unwrap();

        let (_, grad) = loss_and_gradient(&p, &target, &grid).unwrap();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        for i in 0..grad.len() {
            let x = p.as_slice()[i];
            let h = 1e-6 * x.abs().max(1.0);
            let eval = |v: f64| {
                let mut q = p.as_slice().to_vec();
                q[i] = v;
                loss_and_gradient(&ParamVector::from_raw(q).unwrap(), &target, &grid).unwrap().0
            };
            let fd = (eval(x + h) - eval(x - h)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / grad[i].abs().max(1e-6 * norm).max(1e-12);
            worst = worst.max(rel);
            assert!(rel <= 1e-4, "draw {draw} param {i}: analytic {} fd {fd} rel {rel}", grad[i]);
        }
    }
    println!("worst relative gradient error {worst:.3e}");
}

#[test]
fn scaled_fitted_response_is_nearly_proportional() {
    let fs = 48000.0;
    let grid = FrequencyGrid::for_sample_rate(fs, 256).unwrap();
    let curves = synthetic_curves(6, 3, 0.3, 5.0, 3.0).unwrap();
    let mut checked = 0;
    for (name, curve) in &curves {
        let mut cfg = FitConfig::new(8, grid.clone());
        cfg.iterations = 2000;
        let (fitted, _) = fit(curve, 2400.0, fs, &cfg).unwrap();
        if fitted.params.bands().iter().any(|b| b.gain_db.abs() > 12.0) {
            continue;
        }
        let base = peq_log_magnitude(&fitted.params, grid.freqs()).unwrap();
        let scaled = peq_log_magnitude(&scale_to_delay(&fitted, 4800.0).unwrap(), grid.freqs()).unwrap();
        let dev = base.iter().zip(&scaled).map(|(b, s)| (s - 2.0 * b).abs()).fold(0.0, f64::max);
        println!("{name}: max deviation from 2x {dev:.4} dB");
        assert!(dev < 1.0, "{name}: {dev} dB");
        checked += 1;
    }
    assert!(checked >= 3, "only {checked} fits had all gains within 12 dB");
}

#[test]
fn fits_are_deterministic() {
    let fs = 48000.0;
    let grid = FrequencyGrid::for_sample_rate(fs, 128).unwrap();
    let target: Vec<f64> = grid.freqs().iter().map(|f| -0.3 - 0.2 * (f / 1000.0).log10()).collect();
    let mut cfg = FitConfig::new(6, grid);
    cfg.iterations = 500;
    let (a, ra) = fit_target_db(&target, 3000.0, fs, &cfg).unwrap();
    let (b, rb) = fit_target_db(&target, 3000.0, fs, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.loss_trace, rb.loss_trace);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}
