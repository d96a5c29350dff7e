//! Runs the synthetic-curve campaign for 4, 8 and 12 bands and prints the
//! pooled relative T60 error statistics. Optional argument: curve count.

use fdn_peq::eval::{run_campaign, synthetic_curves, CampaignConfig};
use fdn_peq::optim::FitConfig;
use fdn_peq::target::FrequencyGrid;
use std::time::Instant;

fn main() -> fdn_peq::Result<()> {
    let count: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let curves = synthetic_curves(count, 7, 0.3, 5.0, 3.0)?;
    for n in [4, 8, 12] {
        let start = Instant::now();
        let fit = FitConfig::new(n, FrequencyGrid::for_sample_rate(48000.0, 512)?);
        let mut cfg = CampaignConfig::new(fit, 48000.0);
        cfg.seed = 1;
        let r = run_campaign(&curves, &cfg)?;
        let d = &r.distribution;
        println!(
            "N={n:2} p95_abs {:.3}% max {:.3}% median {:.3}% fail {} violating {:?} ({:.1}s)",
            d.p95_abs, d.max_abs, d.median, r.failures, r.violating_curves(), start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
