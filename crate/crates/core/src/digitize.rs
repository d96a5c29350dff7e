//! Digitization of the analog prototypes (prewarped bilinear or
//! magnitude-matched), digital response evaluation and SOS export.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peq::PeqParams;
use crate::prototypes::{BandKind, BandParams};

/// Digital second-order section with `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
    pub fs: f64,
}

impl BiquadCoeffs {
    pub fn identity(fs: f64) -> Self {
        Self { b0: 1.0, b1: 0.0, b2: 0.0, a1: 0.0, a2: 0.0, fs }
    }

    /// Triangle stability conditions on the denominator.
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    /// Largest pole modulus of `z^2 + a1 z + a2`.
    pub fn pole_radius(&self) -> f64 {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            self.a2.sqrt()
        } else {
            let s = disc.sqrt();
            ((-self.a1 + s) / 2.0).abs().max(((-self.a1 - s) / 2.0).abs())
        }
    }

    /// Squared magnitude at `f` Hz.
    pub fn power_at(&self, f: f64) -> f64 {
        let w = 2.0 * PI * f / self.fs;
        let (c1, s1) = (w.cos(), w.sin());
        let (c2, s2) = ((2.0 * w).cos(), (2.0 * w).sin());
        let nr = self.b0 + self.b1 * c1 + self.b2 * c2;
        let ni = -(self.b1 * s1 + self.b2 * s2);
        let dr = 1.0 + self.a1 * c1 + self.a2 * c2;
        let di = -(self.a1 * s1 + self.a2 * s2);
        (nr * nr + ni * ni) / (dr * dr + di * di)
    }

    pub fn magnitude_db(&self, f: f64) -> f64 {
        10.0 * self.power_at(f).log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosCascade {
    sections: Vec<BiquadCoeffs>,
}

impl SosCascade {
    pub fn new(sections: Vec<BiquadCoeffs>) -> Result<Self> {
        let Some(first) = sections.first() else {
            return Err(Error::InvalidArgument("SOS cascade must not be empty".into()));
        };
        if sections.iter().any(|s| s.fs != first.fs) {
            return Err(Error::InvalidArgument("SOS sections must share one sample rate".into()));
        }
        Ok(Self { sections })
    }

    pub fn sections(&self) -> &[BiquadCoeffs] {
        &self.sections
    }

    pub fn fs(&self) -> f64 {
        self.sections[0].fs
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    /// `b0,b1,b2,a0,a1,a2` rows at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("b0,b1,b2,a0,a1,a2\n");
        for s in &self.sections {
            let row = [s.b0, s.b1, s.b2, 1.0, s.a1, s.a2]
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&row);
            out.push('\n');
        }
        out
    }

    /// Self-describing export for one delay line: the sections together with
    /// the sample rate, delay length and the band parameters they realize.
    pub fn to_json(&self, delay_samples: f64, bands: &PeqParams) -> Result<String> {
        let sections: Vec<_> = self
            .sections
            .iter()
            .map(|s| serde_json::json!({"b0": s.b0, "b1": s.b1, "b2": s.b2, "a0": 1.0, "a1": s.a1, "a2": s.a2}))
            .collect();
        let doc = serde_json::json!({
            "fs": self.fs(),
            "delay_samples": delay_samples,
            "bands": bands,
            "sections": sections,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Analog prototype `(b2 s^2 + b1 s + b0) / (a2 s^2 + a1 s + a0)` with `s`
/// normalized to the band frequency.
fn analog_prototype(band: &BandParams) -> ([f64; 3], [f64; 3]) {
    let a = band.amp();
    let q = band.q;
    match band.kind {
        BandKind::Bell => ([1.0, a / q, 1.0], [1.0, 1.0 / (a * q), 1.0]),
        BandKind::LowShelf => {
            let k = a.sqrt() / q;
            ([a * a, a * k, a], [1.0, k, a])
        }
        BandKind::HighShelf => {
            let k = a.sqrt() / q;
            ([a, a * k, a * a], [a, k, 1.0])
        }
    }
}

/// Bilinear transform with prewarping at the band frequency.
pub fn band_to_biquad(band: &BandParams, fs: f64) -> Result<BiquadCoeffs> {
    band.validate()?;
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::InvalidParameter(format!("bad sample rate {fs}")));
    }
    if band.fc >= fs / 2.0 {
        return Err(Error::InvalidParameter(format!(
            "f_c {} Hz is not below Nyquist ({} Hz)",
            band.fc,
            fs / 2.0
        )));
    }
    if band.gain_db == 0.0 {
        return Ok(BiquadCoeffs::identity(fs));
    }
    // Coefficients listed constant term first: ([b0, b1, b2], [a0, a1, a2]) in s.
    let (num, den) = analog_prototype(band);
    // s = k (1 - z^-1) / (1 + z^-1), k = 1 / tan(pi f_c / fs)
    let k = 1.0 / (PI * band.fc / fs).tan();
    let k2 = k * k;
    let map = |c: [f64; 3]| {
        let [c0, c1, c2] = c;
        [c2 * k2 + c1 * k + c0, 2.0 * (c0 - c2 * k2), c2 * k2 - c1 * k + c0]
    };
    let [n0, n1, n2] = map(num);
    let [d0, d1, d2] = map(den);
    let out = BiquadCoeffs { b0: n0 / d0, b1: n1 / d0, b2: n2 / d0, a1: d1 / d0, a2: d2 / d0, fs };
    if ![out.b0, out.b1, out.b2, out.a1, out.a2].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite coefficients for {band:?}")));
    }
    Ok(out)
}

/// Magnitude-matched design: analog poles mapped through `z = e^{sT}`, the
/// numerator solved so the digital magnitude equals the analog one at DC,
/// at `f_c` and at Nyquist. Falls back to [`band_to_biquad`] when those three
/// magnitudes admit no real numerator (deep cuts close to Nyquist).
pub fn band_to_biquad_matched(band: &BandParams, fs: f64) -> Result<BiquadCoeffs> {
    band.validate()?;
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::InvalidParameter(format!("bad sample rate {fs}")));
    }
    if band.fc >= fs / 2.0 {
        return Err(Error::InvalidParameter(format!(
            "f_c {} Hz is not below Nyquist ({} Hz)",
            band.fc,
            fs / 2.0
        )));
    }
    if band.gain_db == 0.0 {
        return Ok(BiquadCoeffs::identity(fs));
    }
    let (_, [d0, d1, d2]) = analog_prototype(band);
    // Poles of d2 S^2 + d1 S + d0 with S = s / w_c; scaled by w_c T.
    let wt = 2.0 * PI * band.fc / fs;
    let re = -d1 / (2.0 * d2) * wt;
    let disc = d1 * d1 - 4.0 * d2 * d0;
    let (a1, a2) = if disc < 0.0 {
        let im = (-disc).sqrt() / (2.0 * d2) * wt;
        (-2.0 * re.exp() * im.cos(), (2.0 * re).exp())
    } else {
        let h = disc.sqrt() / (2.0 * d2) * wt;
        let (z1, z2) = ((re + h).exp(), (re - h).exp());
        (-(z1 + z2), z1 * z2)
    };

    let phi = |f: f64| {
        let p1 = (PI * f / fs).sin().powi(2);
        let p0 = 1.0 - p1;
        (p0, p1, 4.0 * p0 * p1)
    };
    let big_a0 = (1.0 + a1 + a2).powi(2);
    let big_a1 = (1.0 - a1 + a2).powi(2);
    let big_a2 = -4.0 * a2;
    let h_dc = band.magnitude(0.0)?.powi(2);
    let h_ny = band.magnitude(fs / 2.0)?.powi(2);
    let h_c = band.magnitude(band.fc)?.powi(2);
    let big_b0 = big_a0 * h_dc;
    let big_b1 = big_a1 * h_ny;
    let (p0, p1, p2) = phi(band.fc);
    let big_b2 = (h_c * (big_a0 * p0 + big_a1 * p1 + big_a2 * p2) - big_b0 * p0 - big_b1 * p1) / p2;

    let (w, v) = (big_b0.sqrt(), big_b1.sqrt());
    let b1 = (w - v) / 2.0;
    let sum = (w + v) / 2.0;
    let radicand = sum * sum + big_b2;
    if !(radicand >= 0.0) {
        // No real numerator meets all three points; bilinear still pins f_c.
        return band_to_biquad(band, fs);
    }
    let root = radicand.sqrt();
    let (b0, b2) = ((sum + root) / 2.0, (sum - root) / 2.0);
    let out = BiquadCoeffs { b0, b1, b2, a1, a2, fs };
    if ![out.b0, out.b1, out.b2, out.a1, out.a2].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite coefficients for {band:?}")));
    }
    Ok(out)
}

/// Analog-to-digital conversion method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Digitizer {
    /// Prewarped bilinear transform, [`band_to_biquad`].
    Bilinear,
    /// Pole-mapped, magnitude-matched design, [`band_to_biquad_matched`].
    #[default]
    Matched,
}

impl Digitizer {
    pub fn design(self, band: &BandParams, fs: f64) -> Result<BiquadCoeffs> {
        match self {
            Digitizer::Bilinear => band_to_biquad(band, fs),
            Digitizer::Matched => band_to_biquad_matched(band, fs),
        }
    }
}

/// One section per band, in band order, using the default digitizer.
pub fn peq_to_sos(params: &PeqParams, fs: f64) -> Result<SosCascade> {
    peq_to_sos_with(params, fs, Digitizer::default())
}

pub fn peq_to_sos_with(params: &PeqParams, fs: f64, method: Digitizer) -> Result<SosCascade> {
    let sections = params.bands().iter().map(|b| method.design(b, fs)).collect::<Result<_>>()?;
    SosCascade::new(sections)
}

/// Cascade response in dB, the sum of the per-section responses.
pub fn digital_magnitude(sos: &SosCascade, freqs: &[f64]) -> Result<Vec<f64>> {
    let nyquist = sos.fs() / 2.0;
    freqs
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f < nyquist) {
                return Err(Error::InvalidArgument(format!("frequency {f} Hz outside (0, {nyquist})")));
            }
            Ok(sos.sections.iter().map(|s| s.magnitude_db(f)).sum())
        })
        .collect()
}

/// Analog-versus-digital deviation of one PEQ, split at `0.7 * fs/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DigitizationError {
    /// Worst per-band deviation on grid points up to 0.7 Nyquist, dB.
    pub max_band_dev_low_db: f64,
    /// Worst per-band deviation above 0.7 Nyquist, dB.
    pub max_band_dev_high_db: f64,
    /// Whole-cascade deviation up to 0.7 Nyquist, dB.
    pub max_cascade_dev_low_db: f64,
    pub max_cascade_dev_high_db: f64,
    /// Worst relative mismatch of linear magnitude at each band's f_c.
    pub max_center_rel_err: f64,
}

pub fn digitization_error(
    params: &PeqParams,
    fs: f64,
    freqs: &[f64],
    method: Digitizer,
) -> Result<DigitizationError> {
    let split = 0.7 * fs / 2.0;
    let mut out = DigitizationError {
        max_band_dev_low_db: 0.0,
        max_band_dev_high_db: 0.0,
        max_cascade_dev_low_db: 0.0,
        max_cascade_dev_high_db: 0.0,
        max_center_rel_err: 0.0,
    };
    let mut cascade = vec![0.0; freqs.len()];
    for band in params.bands() {
        let bq = method.design(band, fs)?;
        let analog_fc = band.magnitude(band.fc)?;
        let digital_fc = bq.power_at(band.fc).sqrt();
        out.max_center_rel_err = out.max_center_rel_err.max((digital_fc - analog_fc).abs() / analog_fc);
        for (i, &f) in freqs.iter().enumerate() {
            let dev = bq.magnitude_db(f) - band.magnitude_db(f)?;
            cascade[i] += dev;
            let slot = if f <= split { &mut out.max_band_dev_low_db } else { &mut out.max_band_dev_high_db };
            *slot = slot.max(dev.abs());
        }
    }
    for (&f, dev) in freqs.iter().zip(&cascade) {
        let slot = if f <= split { &mut out.max_cascade_dev_low_db } else { &mut out.max_cascade_dev_high_db };
        *slot = slot.max(dev.abs());
    }
    Ok(out)
}
