//! Fits the bundled median T60 curve at 100 ms / 48 kHz for 4, 8 and 12 bands
//! and prints each fit with its digitization error.

use fdn_peq::digitize::{digitization_error, Digitizer};
use fdn_peq::{fit, load_t60_table, FitConfig, FrequencyGrid};

fn main() -> fdn_peq::Result<()> {
    let curve = load_t60_table(include_str!("../data/median_t60.csv"))?;
    let fs = 48000.0;
    for n in [4, 8, 12] {
        let grid = FrequencyGrid::for_sample_rate(fs, 512)?;
        let mut cfg = FitConfig::new(n, grid.clone());
        cfg.log_every = 0;
        let (fitted, report) = fit(&curve, 4800.0, fs, &cfg)?;
        println!(
            "N={n:2}  mse={:.3e}  best_iter={}  time={:.2}s",
            report.final_mse, report.best_iteration, report.wall_time_s
        );
        for method in [Digitizer::Matched, Digitizer::Bilinear] {
            let e = digitization_error(&fitted.params, fs, grid.freqs(), method)?;
            println!(
                "    {method:?}: band dev <0.7 nyq {:.3} dB, above {:.3} dB; cascade {:.3} / {:.3} dB",
                e.max_band_dev_low_db, e.max_band_dev_high_db, e.max_cascade_dev_low_db, e.max_cascade_dev_high_db
            );
        }
        for b in fitted.params.bands() {
            println!("    {:?} fc={:.1} g={:.3} q={:.3}", b.kind, b.fc, b.gain_db, b.q);
        }
    }
    Ok(())
}
