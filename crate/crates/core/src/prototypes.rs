//! Analog magnitude responses of the low-shelf, bell and high-shelf
//! second-order prototypes, evaluated on the imaginary axis at `s = j f / f_c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandKind {
    LowShelf,
    Bell,
    HighShelf,
}

/// One second-order band in analog-prototype form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandParams {
    pub kind: BandKind,
    #[serde(rename = "fc_hz")]
    pub fc: f64,
    pub gain_db: f64,
    pub q: f64,
}

impl BandParams {
    pub fn new(kind: BandKind, fc: f64, gain_db: f64, q: f64) -> Result<Self> {
        let band = Self { kind, fc, gain_db, q };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fc.is_finite() && self.fc > 0.0) {
            return Err(Error::InvalidParameter(format!("f_c must be positive, got {}", self.fc)));
        }
        if !(self.q.is_finite() && self.q > 0.0) {
            return Err(Error::InvalidParameter(format!("Q must be positive, got {}", self.q)));
        }
        if !self.gain_db.is_finite() {
            return Err(Error::InvalidParameter(format!("gain must be finite, got {}", self.gain_db)));
        }
        Ok(())
    }

    /// Linear magnitude at `f` Hz, dispatched on the band kind.
    pub fn magnitude(&self, f: f64) -> Result<f64> {
        match self.kind {
            BandKind::Bell => bell_magnitude(f, self),
            BandKind::LowShelf => low_shelf_magnitude(f, self),
            BandKind::HighShelf => high_shelf_magnitude(f, self),
        }
    }

    pub fn magnitude_db(&self, f: f64) -> Result<f64> {
        Ok(20.0 * self.magnitude(f)?.log10())
    }

    pub(crate) fn amp(&self) -> f64 {
        10f64.powf(self.gain_db / 40.0)
    }
}

/// `A = 10^(G/40)`, the square root of the linear gain.
pub fn db_to_linear_amp(gain_db: f64) -> Result<f64> {
    if !gain_db.is_finite() {
        return Err(Error::InvalidParameter(format!("gain must be finite, got {gain_db}")));
    }
    Ok(10f64.powf(gain_db / 40.0))
}

fn check(f: f64, band: &BandParams, kind: BandKind) -> Result<()> {
    band.validate()?;
    if band.kind != kind {
        return Err(Error::InvalidParameter(format!(
            "expected a {kind:?} band, got {:?}",
            band.kind
        )));
    }
    if !(f >= 0.0 && f.is_finite()) {
        return Err(Error::InvalidParameter(format!("frequency must be >= 0, got {f}")));
    }
    Ok(())
}

pub fn bell_magnitude(f: f64, band: &BandParams) -> Result<f64> {
    check(f, band, BandKind::Bell)?;
    let a = band.amp();
    let x = f / band.fc;
    let edge = (1.0 - x * x).powi(2);
    let num = edge + (a * x / band.q).powi(2);
    let den = edge + (x / (a * band.q)).powi(2);
    Ok((num / den).sqrt())
}

pub fn low_shelf_magnitude(f: f64, band: &BandParams) -> Result<f64> {
    check(f, band, BandKind::LowShelf)?;
    let a = band.amp();
    let x = f / band.fc;
    let mid = (a.sqrt() * x / band.q).powi(2);
    let num = (a - x * x).powi(2) + mid;
    let den = (1.0 - a * x * x).powi(2) + mid;
    Ok(a * (num / den).sqrt())
}

pub fn high_shelf_magnitude(f: f64, band: &BandParams) -> Result<f64> {
    check(f, band, BandKind::HighShelf)?;
    let a = band.amp();
    let x = f / band.fc;
    let mid = (a.sqrt() * x / band.q).powi(2);
    let num = (1.0 - a * x * x).powi(2) + mid;
    let den = (a - x * x).powi(2) + mid;
    Ok(a * (num / den).sqrt())
}
