//! N-band parametric equalizer composition and the delay-length gain law.
//!
//! Bands are shared across every delay line of a network. A [`FittedPeq`] holds
//! the parameters fitted at a reference delay `m_ref`; any other line of
//! length `m_k` uses the same frequencies and Q values with every dB gain
//! multiplied by `m_k / m_ref`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prototypes::{BandKind, BandParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeqParams {
    bands: Vec<BandParams>,
}

impl PeqParams {
    /// Validates the layout: low shelf first, high shelf last, bells in
    /// between with strictly increasing center frequencies.
    pub fn new(bands: Vec<BandParams>) -> Result<Self> {
        let n = bands.len();
        if n < 3 {
            return Err(Error::InvalidArgument(format!("a PEQ needs at least 3 bands, got {n}")));
        }
        for b in &bands {
            b.validate()?;
        }
        if bands[0].kind != BandKind::LowShelf || bands[n - 1].kind != BandKind::HighShelf {
            return Err(Error::InvalidArgument(
                "first band must be a low shelf and last band a high shelf".into(),
            ));
        }
        if bands[1..n - 1].iter().any(|b| b.kind != BandKind::Bell) {
            return Err(Error::InvalidArgument("interior bands must be bells".into()));
        }
        if bands[1..n - 1].windows(2).any(|w| w[1].fc <= w[0].fc) {
            return Err(Error::InvalidArgument(
                "bell center frequencies must be strictly increasing".into(),
            ));
        }
        Ok(Self { bands })
    }

    /// Builds a PEQ from bands in arbitrary bell order, sorting the bells by
    /// center frequency.
    pub fn from_unordered(mut bands: Vec<BandParams>) -> Result<Self> {
        let n = bands.len();
        if n >= 3 {
            bands[1..n - 1].sort_by(|a, b| a.fc.total_cmp(&b.fc));
        }
        Self::new(bands)
    }

    pub fn bands(&self) -> &[BandParams] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// True when every band, shelves included, sits above its predecessor.
    pub fn is_frequency_ordered(&self) -> bool {
        self.bands.windows(2).all(|w| w[1].fc > w[0].fc)
    }

    fn scaled(&self, factor: f64) -> Self {
        let bands = self
            .bands
            .iter()
            .map(|b| BandParams { gain_db: b.gain_db * factor, ..*b })
            .collect();
        Self { bands }
    }
}

/// Shared PEQ parameters fitted at reference delay `m_ref` (samples) and
/// sample rate `fs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPeq {
    pub fs: f64,
    pub m_ref: f64,
    #[serde(rename = "bands")]
    pub params: PeqParams,
}

impl FittedPeq {
    pub fn new(params: PeqParams, m_ref: f64, fs: f64) -> Result<Self> {
        if !(m_ref >= 1.0 && m_ref.is_finite()) {
            return Err(Error::InvalidArgument(format!("m_ref must be >= 1, got {m_ref}")));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::InvalidArgument(format!("fs must be positive, got {fs}")));
        }
        Ok(Self { fs, m_ref, params })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and re-validates a fit document.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: FittedPeq = serde_json::from_str(text)?;
        let params = PeqParams::new(raw.params.bands)?;
        Self::new(params, raw.m_ref, raw.fs)
    }
}

/// Sum of the per-band dB responses at each frequency.
pub fn peq_log_magnitude(params: &PeqParams, freqs: &[f64]) -> Result<Vec<f64>> {
    if freqs.is_empty() {
        return Err(Error::InvalidArgument("empty frequency vector".into()));
    }
    if freqs.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(Error::InvalidArgument("frequencies must be positive".into()));
    }
    freqs
        .iter()
        .map(|&f| params.bands.iter().map(|b| b.magnitude_db(f)).sum())
        .collect()
}

/// Parameters for a delay line of `m_k` samples: gains scaled by `m_k / m_ref`.
pub fn scale_to_delay(fitted: &FittedPeq, m_k: f64) -> Result<PeqParams> {
    if !(m_k >= 1.0 && m_k.is_finite()) {
        return Err(Error::InvalidArgument(format!("delay must be >= 1 sample, got {m_k}")));
    }
    Ok(fitted.params.scaled(m_k / fitted.m_ref))
}

/// Inverts the per-line attenuation law: `T60 = -60 m_k / (H_dB fs)`.
pub fn response_to_t60(response_db: &[f64], m_k: f64, fs: f64) -> Result<Vec<f64>> {
    response_db
        .iter()
        .enumerate()
        .map(|(index, &r)| {
            if r < 0.0 {
                Ok(-60.0 * m_k / (r * fs))
            } else {
                Err(Error::NonDecaying { index, value_db: r })
            }
        })
        .collect()
}
