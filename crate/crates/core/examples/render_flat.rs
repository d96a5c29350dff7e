//! Fits a flat 1 s T60 target with 12 bands, renders an 8-line FDN with the
//! scaled filters and prints the measured octave-band decay times.

use fdn_peq::digitize::Digitizer;
use fdn_peq::fdn::{coprime_delays, render_ir, schroeder_t60, broadband_t60, FdnConfig};
use fdn_peq::{fit, FitConfig, FrequencyGrid, T60Curve};

fn main() -> fdn_peq::Result<()> {
    let fs = 48000.0;
    let delays = coprime_delays(8, 0.01, 0.3, fs)?;
    let mut sorted = delays.clone();
    sorted.sort_unstable();
    let m_ref = ((sorted[3] + sorted[4]) as f64 / 2.0).round();
    let mut cfg = FitConfig::new(12, FrequencyGrid::for_sample_rate(fs, 512)?);
    cfg.log_every = 0;
    let (fitted, report) = fit(&T60Curve::flat(1.0, 20.0, 20000.0)?, m_ref, fs, &cfg)?;
    println!("delays {delays:?} m_ref {m_ref} mse {:.3e}", report.final_mse);
    for method in [Digitizer::Matched, Digitizer::Bilinear] {
        let fdn = FdnConfig::from_fit(&fitted, &delays, 2.0, 0, method)?;
        let ir = render_ir(&fdn)?;
        print!("{method:?}: broadband {:.3}", broadband_t60(&ir, fs)?.t60_s);
        for band in [125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0] {
            print!("  {band}: {:.3}", schroeder_t60(&ir, fs, band)?.t60_s);
        }
        println!();
    }
    Ok(())
}
