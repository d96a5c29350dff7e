//! `fdnpeq`: fit, export, render and evaluate scalable PEQ attenuation filters.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fdn_peq::digitize::{peq_to_sos_with, Digitizer};
use fdn_peq::eval::{run_campaign, synthetic_curves, CampaignConfig};
use fdn_peq::fdn::{
    broadband_t60, coprime_delays, default_duration, render_ir, schroeder_t60, write_decay_csv, write_wav, FdnConfig,
};
use fdn_peq::io::{read_to_string, write_atomic};
use fdn_peq::optim::FitConfig;
use fdn_peq::{fit, load_t60_table, peq_log_magnitude, response_to_t60, scale_to_delay, Error, FittedPeq, FrequencyGrid};

const PRESET_LINES: usize = 8;
const PRESET_MIN_S: f64 = 0.01;
const PRESET_MAX_S: f64 = 0.3;
const OCTAVE_BANDS: [f64; 7] = [125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0];

#[derive(Parser)]
#[command(name = "fdnpeq", version, about = "Scalable parametric-EQ attenuation filters for FDN reverbs")]
struct Cli {
    /// Only report errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a PEQ to a T60 table at a reference delay.
    Fit(FitCmd),
    /// Write per-line SOS coefficients for a fitted PEQ.
    Export(ExportCmd),
    /// Render an FDN impulse response and measure its decay.
    Render(RenderCmd),
    /// Evaluate relative T60 error over many curves.
    Campaign(CampaignCmd),
}

#[derive(Args, Clone)]
struct OptimArgs {
    /// Number of bands, shelves included.
    #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u64).range(3..))]
    bands: u64,
    #[arg(long, default_value_t = fdn_peq::optim::DEFAULT_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = fdn_peq::optim::DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = fdn_peq::target::DEFAULT_GRID_POINTS)]
    grid_size: usize,
    #[arg(long, default_value_t = 48000.0)]
    fs: f64,
}

impl OptimArgs {
    fn fit_config(&self) -> Result<FitConfig, Error> {
        let grid = FrequencyGrid::for_sample_rate(self.fs, self.grid_size)?;
        let mut cfg = FitConfig::new(self.bands as usize, grid);
        cfg.iterations = self.iterations;
        cfg.learning_rate = self.lr;
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitCmd {
    /// T60 table with header `freq_hz,t60_s`.
    #[arg(long)]
    t60: PathBuf,
    /// Reference delay in milliseconds.
    #[arg(long, conflicts_with = "delay_samples")]
    delay_ms: Option<f64>,
    /// Reference delay in samples.
    #[arg(long)]
    delay_samples: Option<f64>,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long)]
    out: PathBuf,
    /// Fit report path; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DigitizerArg {
    Matched,
    Bilinear,
}

impl From<DigitizerArg> for Digitizer {
    fn from(d: DigitizerArg) -> Self {
        match d {
            DigitizerArg::Matched => Digitizer::Matched,
            DigitizerArg::Bilinear => Digitizer::Bilinear,
        }
    }
}

#[derive(Args)]
struct DelayList {
    /// Comma-separated delay lengths in milliseconds.
    #[arg(long, value_delimiter = ',', conflicts_with = "delays_samples")]
    delays_ms: Option<Vec<f64>>,
    /// Comma-separated delay lengths in samples.
    #[arg(long, value_delimiter = ',')]
    delays_samples: Option<Vec<f64>>,
}

impl DelayList {
    /// Explicit delays in samples, or the coprime preset when none are given.
    fn resolve(&self, fs: f64) -> Result<Vec<usize>, Error> {
        let samples: Vec<f64> = match (&self.delays_ms, &self.delays_samples) {
            (Some(ms), _) => ms.iter().map(|v| v / 1000.0 * fs).collect(),
            (None, Some(s)) => s.clone(),
            (None, None) => return coprime_delays(PRESET_LINES, PRESET_MIN_S, PRESET_MAX_S, fs),
        };
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty delay list".into()));
        }
        samples
            .into_iter()
            .map(|v| {
                let m = v.round();
                if m >= 1.0 && m.is_finite() {
                    Ok(m as usize)
                } else {
                    Err(Error::InvalidArgument(format!("delay must round to at least 1 sample, got {v}")))
                }
            })
            .collect()
    }
}

#[derive(Args)]
struct ExportCmd {
    /// Fitted PEQ JSON.
    #[arg(long)]
    fit: PathBuf,
    #[command(flatten)]
    delays: DelayList,
    #[arg(long, value_enum, default_value = "matched")]
    digitizer: DigitizerArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RenderCmd {
    #[arg(long)]
    fit: PathBuf,
    #[command(flatten)]
    delays: DelayList,
    /// Seconds; defaults to twice the longest T60 implied by the fit, at most 10 s.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "matched")]
    digitizer: DigitizerArg,
    /// Impulse response WAV.
    #[arg(long)]
    out: PathBuf,
    /// Decay measurements; defaults to `<out>.decay.csv`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CampaignCmd {
    /// Directory of T60 tables (`*.csv`).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    dir: Option<PathBuf>,
    /// Generate this many smooth random curves instead.
    #[arg(long)]
    synthetic: Option<usize>,
    #[command(flatten)]
    optim: OptimArgs,
    /// Delay range in milliseconds drawn per curve.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [10.0, 300.0])]
    delay_range_ms: Vec<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
    /// Receives `summary.json` and `histogram.csv`.
    #[arg(long)]
    out_dir: PathBuf,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

fn load_fit(path: &Path) -> Result<FittedPeq, Error> {
    FittedPeq::from_json(&read_to_string(path)?)
}

fn cmd_fit(args: FitCmd) -> Result<(), Error> {
    let cfg = args.optim.fit_config()?;
    let fs = args.optim.fs;
    let curve = load_t60_table(&read_to_string(&args.t60)?)?;
    let m_ref = match (args.delay_ms, args.delay_samples) {
        (Some(ms), _) => (ms / 1000.0 * fs).round(),
        (None, Some(s)) => s.round(),
        (None, None) => {
            let mut d = coprime_delays(PRESET_LINES, PRESET_MIN_S, PRESET_MAX_S, fs)?;
            d.sort_unstable();
            ((d[d.len() / 2 - 1] + d[d.len() / 2]) as f64 / 2.0).round()
        }
    };
    if !(m_ref >= 1.0) {
        return Err(Error::InvalidArgument(format!("reference delay must be at least 1 sample, got {m_ref}")));
    }
    let (fitted, report) = fit(&curve, m_ref, fs, &cfg)?;
    write_atomic(&args.out, fitted.to_json()?.as_bytes())?;
    let report_path = args.report.unwrap_or_else(|| with_suffix(&args.out, ".report.json"));
    write_atomic(&report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    println!(
        "fit {} bands at m_ref {m_ref}: mse {:.4e} dB^2 (best at iteration {}) -> {}",
        cfg.n_bands,
        report.final_mse,
        report.best_iteration,
        args.out.display()
    );
    Ok(())
}

fn cmd_export(args: ExportCmd) -> Result<(), Error> {
    let fitted = load_fit(&args.fit)?;
    let delays = args.delays.resolve(fitted.fs)?;
    ensure_dir(&args.out_dir)?;
    let mut total = 0;
    for (k, &m) in delays.iter().enumerate() {
        let params = scale_to_delay(&fitted, m as f64)?;
        let sos = peq_to_sos_with(&params, fitted.fs, args.digitizer.into())?;
        let stem = args.out_dir.join(format!("line{k:02}_m{m}"));
        write_atomic(&with_suffix(&stem, ".csv"), sos.to_csv().as_bytes())?;
        write_atomic(&with_suffix(&stem, ".json"), sos.to_json(m as f64, &params)?.as_bytes())?;
        total += sos.len();
    }
    println!("{} lines, {total} biquads -> {}", delays.len(), args.out_dir.display());
    Ok(())
}

/// Longest T60 the fit realizes over its own grid band.
fn implied_max_t60(fitted: &FittedPeq) -> Result<f64, Error> {
    let grid = FrequencyGrid::for_sample_rate(fitted.fs, 256)?;
    let db = peq_log_magnitude(&fitted.params, grid.freqs())?;
    let t60 = response_to_t60(&db, fitted.m_ref, fitted.fs)?;
    Ok(t60.into_iter().fold(0.0, f64::max))
}

fn cmd_render(args: RenderCmd) -> Result<(), Error> {
    let fitted = load_fit(&args.fit)?;
    let delays = args.delays.resolve(fitted.fs)?;
    let duration = match args.duration {
        Some(d) => d,
        None => default_duration(implied_max_t60(&fitted)?),
    };
    let cfg = FdnConfig::from_fit(&fitted, &delays, duration, args.seed, args.digitizer.into())?;
    let ir = render_ir(&cfg)?;
    write_wav(&args.out, &ir, fitted.fs)?;

    let mut decays = vec![broadband_t60(&ir, fitted.fs)?];
    for &band in OCTAVE_BANDS.iter().filter(|&&b| b * std::f64::consts::SQRT_2 < fitted.fs / 2.0) {
        match schroeder_t60(&ir, fitted.fs, band) {
            Ok(d) => decays.push(d),
            Err(e) => log::warn!("{band} Hz band: {e}"),
        }
    }
    let report_path = args.report.unwrap_or_else(|| with_suffix(&args.out, ".decay.csv"));
    write_decay_csv(&report_path, &decays)?;
    println!(
        "{} lines, {:.2} s -> {}; broadband T60 {:.3} s",
        delays.len(),
        duration,
        args.out.display(),
        decays[0].t60_s
    );
    Ok(())
}

fn load_curve_dir(dir: &Path) -> Result<Vec<(String, fdn_peq::T60Curve)>, Error> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no .csv curves in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let curve = load_t60_table(&read_to_string(p)?).map_err(|e| match e {
                Error::Parse { line, message } => {
                    Error::InvalidArgument(format!("{}:{line}: {message}", p.display()))
                }
                e => e,
            })?;
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, curve))
        })
        .collect()
}

fn cmd_campaign(args: CampaignCmd) -> Result<(), Error> {
    let fit = args.optim.fit_config()?;
    let curves = match (&args.dir, args.synthetic) {
        (Some(dir), _) => load_curve_dir(dir)?,
        (None, Some(n)) if n > 0 => synthetic_curves(n, args.optim.seed, 0.3, 5.0, 3.0)?,
        _ => return Err(Error::InvalidArgument("campaign needs --dir or --synthetic N > 0".into())),
    };
    let mut cfg = CampaignConfig::new(fit, args.optim.fs);
    cfg.delay_range_s = (args.delay_range_ms[0] / 1000.0, args.delay_range_ms[1] / 1000.0);
    cfg.seed = args.optim.seed;
    cfg.workers = args.workers;
    cfg.bin_width_pct = args.bin_width;
    log::info!("fitting {} curves with {} bands", curves.len(), cfg.fit.n_bands);
    let result = run_campaign(&curves, &cfg)?;

    ensure_dir(&args.out_dir)?;
    write_atomic(&args.out_dir.join("summary.json"), result.summary_json()?.as_bytes())?;
    write_atomic(&args.out_dir.join("histogram.csv"), result.distribution.histogram_csv().as_bytes())?;
    let d = &result.distribution;
    println!(
        "{} curves, {} points, {} failed: median {:.3}%, p5 {:.3}%, p95 {:.3}%, max |err| {:.3}%",
        result.curves.len(),
        d.points,
        result.failures,
        d.median,
        d.p5,
        d.p95,
        d.max_abs
    );
    let violating = result.violating_curves();
    if !violating.is_empty() {
        println!("{} curves exceed ±25%: {}", violating.len(), violating.join(", "));
    }
    Ok(())
}

/// Numerical trouble exits with 2, everything else with 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. }
        | Error::Instability { .. }
        | Error::NumericalFailure { .. }
        | Error::NonDecaying { .. }
        | Error::CampaignAborted { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Export(a) => cmd_export(a),
        Command::Render(a) => cmd_render(a),
        Command::Campaign(a) => cmd_campaign(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            if cli.quiet {
                eprintln!("error: {e}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
