//! T60 tables, the log-spaced optimization grid, and per-line target curves.

use crate::error::{Error, Result};

/// Reverberation time against frequency, strictly increasing in frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct T60Curve {
    points: Vec<(f64, f64)>,
}

impl T60Curve {
    /// Sorts by frequency and validates.
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a T60 curve needs at least 2 points, got {}",
                points.len()
            )));
        }
        for &(f, t) in &points {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidArgument(format!("frequency must be positive, got {f}")));
            }
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!("T60 must be positive, got {t}")));
            }
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = points.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument(format!("duplicate frequency {}", w[0].0)));
        }
        Ok(Self { points })
    }

    /// A constant T60 over the given frequency span.
    pub fn flat(t60: f64, f_lo: f64, f_hi: f64) -> Result<Self> {
        Self::new(vec![(f_lo, t60), (f_hi, t60)])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn max_t60(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::MIN, f64::max)
    }

    /// T60 at one frequency: linear in log10(f), clamped at the ends.
    pub fn t60_at(&self, f: f64) -> f64 {
        let pts = &self.points;
        if f <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if f >= last.0 {
            return last.1;
        }
        let hi = pts.partition_point(|p| p.0 <= f);
        let (f0, t0) = pts[hi - 1];
        if f == f0 {
            return t0;
        }
        let (f1, t1) = pts[hi];
        let w = (f.log10() - f0.log10()) / (f1.log10() - f0.log10());
        t0 + w * (t1 - t0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,t60_s\n");
        for (f, t) in &self.points {
            out.push_str(&format!("{f},{t}\n"));
        }
        out
    }
}

/// Parses a `freq_hz,t60_s` table. Line numbers in errors are 1-based.
pub fn load_t60_table(text: &str) -> Result<T60Curve> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim().replace(' ', "") == "freq_hz,t60_s" => {}
        Some((i, header)) => {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected header \"freq_hz,t60_s\", found {header:?}"),
            })
        }
        None => return Err(Error::Parse { line: 1, message: "empty input".into() }),
    }
    let mut points = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let err = |message: String| Error::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(err(format!("expected 2 fields, found {}", fields.len())));
        }
        let f: f64 = fields[0].parse().map_err(|_| err(format!("bad frequency {:?}", fields[0])))?;
        let t: f64 = fields[1].parse().map_err(|_| err(format!("bad T60 {:?}", fields[1])))?;
        if !(f > 0.0 && f.is_finite()) {
            return Err(err(format!("frequency must be positive, got {f}")));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(err(format!("T60 must be positive, got {t}")));
        }
        if let Some(prev) = seen.insert(f.to_bits(), line_no) {
            return Err(err(format!("duplicate frequency {f} (first on line {prev})")));
        }
        points.push((f, t));
    }
    if points.len() < 2 {
        return Err(Error::Parse {
            line: text.lines().count().max(1),
            message: format!("need at least 2 data rows, found {}", points.len()),
        });
    }
    T60Curve::new(points)
}

/// Log-spaced evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    freqs: Vec<f64>,
}

pub const DEFAULT_GRID_POINTS: usize = 512;
pub const DEFAULT_F_LO: f64 = 20.0;

impl FrequencyGrid {
    pub fn log_spaced(f_lo: f64, f_hi: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidArgument(format!("grid needs >= 2 points, got {points}")));
        }
        if !(f_lo > 0.0 && f_hi > f_lo && f_hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad grid bounds {f_lo}..{f_hi}")));
        }
        let (lo, hi) = (f_lo.ln(), f_hi.ln());
        let step = (hi - lo) / (points - 1) as f64;
        let mut freqs: Vec<f64> = (0..points).map(|i| (lo + step * i as f64).exp()).collect();
        freqs[0] = f_lo;
        freqs[points - 1] = f_hi;
        Ok(Self { freqs })
    }

    /// Default grid for a sample rate: 20 Hz up to just below Nyquist.
    pub fn for_sample_rate(fs: f64, points: usize) -> Result<Self> {
        Self::log_spaced(DEFAULT_F_LO, nyquist_backoff(fs), points)
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }
}

pub fn nyquist_backoff(fs: f64) -> f64 {
    fs / 2.0 * (1.0 - 2f64.powi(-20))
}

pub fn interpolate_to_grid(curve: &T60Curve, grid: &FrequencyGrid) -> Vec<f64> {
    grid.freqs.iter().map(|&f| curve.t60_at(f)).collect()
}

/// Per-line target attenuation in dB: `-60 m_k / (T60 fs)`.
pub fn target_magnitude(t60: &[f64], m_k: f64, fs: f64) -> Result<Vec<f64>> {
    t60.iter()
        .map(|&t| {
            if t > 0.0 && t.is_finite() {
                Ok(-60.0 * m_k / (t * fs))
            } else {
                Err(Error::InvalidArgument(format!("T60 must be positive, got {t}")))
            }
        })
        .collect()
}

/// Decay slope in dB per second, `-60 / T60`.
pub fn decay_slope(t60: &[f64]) -> Result<Vec<f64>> {
    t60.iter()
        .map(|&t| {
            if t > 0.0 && t.is_finite() {
                Ok(-60.0 / t)
            } else {
                Err(Error::InvalidArgument(format!("T60 must be positive, got {t}")))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peq::response_to_t60;
    use proptest::prelude::*;

    #[test]
    fn parses_table() {
        let c = load_t60_table("freq_hz,t60_s\n100,2.0\n1000,1.5").unwrap();
        assert_eq!(c.points(), &[(100.0, 2.0), (1000.0, 1.5)]);
        let shuffled = load_t60_table("freq_hz,t60_s\n1000,1.5\n100,2.0\n").unwrap();
        assert_eq!(c, shuffled);
    }

    #[test]
    fn parse_errors_name_the_line() {
        assert!(matches!(load_t60_table(""), Err(Error::Parse { .. })));
        assert!(matches!(load_t60_table("freq_hz,t60_s\n"), Err(Error::Parse { .. })));
        let cases = [
            ("freq_hz,t60_s\n100,2\nabc,1\n", 3),
            ("freq_hz,t60_s\n100,2\n200,-1\n", 3),
            ("freq_hz,t60_s\n0,2\n200,1\n", 2),
            ("freq_hz,t60_s\n100,2\n100,1\n", 3),
            ("freq_hz,t60_s\n100,2,3\n200,1\n", 2),
            ("frequency,t60\n100,2\n", 1),
        ];
        for (text, want) in cases {
            match load_t60_table(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn interpolation_rules() {
        let c = T60Curve::new(vec![(100.0, 1.0), (1000.0, 2.0), (10000.0, 0.5)]).unwrap();
        assert_eq!(c.t60_at(1000.0), 2.0);
        assert_eq!(c.t60_at(100.0), 1.0);
        assert!((c.t60_at(100f64.sqrt() * 1000f64.sqrt()) - 1.5).abs() < 1e-12);
        assert_eq!(c.t60_at(20.0), 1.0);
        assert_eq!(c.t60_at(20000.0), 0.5);
    }

    #[test]
    fn grid_shape() {
        let g = FrequencyGrid::for_sample_rate(48000.0, 512).unwrap();
        assert_eq!(g.len(), 512);
        assert_eq!(g.freqs()[0], 20.0);
        assert!(g.freqs()[511] < 24000.0);
        assert!(g.freqs().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn target_values() {
        let t = target_magnitude(&[1.0, 2.0], 4800.0, 48000.0).unwrap();
        assert!((t[0] + 6.0).abs() < 1e-15 && (t[1] + 3.0).abs() < 1e-15);
        let d = target_magnitude(&[1.0, 2.0], 9600.0, 48000.0).unwrap();
        assert_eq!(d[0], 2.0 * t[0]);
        assert_eq!(d[1], 2.0 * t[1]);
        assert!(target_magnitude(&[0.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn slope_is_target_at_one_second_delay() {
        let t60 = [0.3, 1.0, 2.7, 5.0];
        assert_eq!(decay_slope(&t60).unwrap(), target_magnitude(&t60, 48000.0, 48000.0).unwrap());
    }

    proptest! {
        #[test]
        fn target_roundtrip(t in 0.05..20.0f64, m in 1.0..20000.0f64, fs in 8000.0..192000.0f64) {
            let db = target_magnitude(&[t], m, fs).unwrap();
            prop_assert!(db[0] < 0.0);
            let back = response_to_t60(&db, m, fs).unwrap();
            prop_assert!((back[0] - t).abs() <= 1e-12 * t);
        }

        #[test]
        fn interpolation_stays_between_neighbours(
            t in proptest::collection::vec(0.1..10.0f64, 2..8), u in 0.0..1.0f64)
        {
            let pts: Vec<(f64, f64)> = t.iter().enumerate().map(|(i, &v)| (100.0 * 2f64.powi(i as i32), v)).collect();
            let c = T60Curve::new(pts.clone()).unwrap();
            for w in pts.windows(2) {
                let f = w[0].0 * (w[1].0 / w[0].0).powf(u);
                let v = c.t60_at(f);
                prop_assert!(v >= w[0].1.min(w[1].1) - 1e-12 && v <= w[0].1.max(w[1].1) + 1e-12);
            }
        }
    }
}
