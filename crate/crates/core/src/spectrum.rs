//! Sampled transmission spectra and their metadata.

use crate::error::{Error, Result};

/// Transmission versus probe detuning from the resonator-line center.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    freqs: Vec<f64>,
    values: Vec<f64>,
    pub meta: SpectrumMeta,
}

/// Grid and configuration provenance of a spectrum.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpectrumMeta {
    /// Configuration label, e.g. "closed loop, N = 577".
    pub label: String,
    /// Total grid span in Hz.
    pub span_hz: f64,
    /// Grid step in Hz (0 for irregular grids).
    pub step_hz: f64,
}

impl Spectrum {
    /// Build a spectrum from parallel arrays. Frequencies must be strictly
    /// increasing and values finite and nonnegative; noisy data may exceed 1.
    pub fn new(freqs: Vec<f64>, values: Vec<f64>, meta: SpectrumMeta) -> Result<Self> {
        if freqs.len() != values.len() {
            return Err(Error::InvalidParams(format!(
                "freqs/values length mismatch: {} vs {}",
                freqs.len(),
                values.len()
            )));
        }
        if freqs.len() < 2 {
            return Err(Error::InvalidParams("spectrum needs at least 2 points".into()));
        }
        if freqs.windows(2).any(|w| !(w[1] > w[0])) || freqs.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidParams("freqs must be finite and strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParams("values must be finite and >= 0".into()));
        }
        Ok(Self { freqs, values, meta })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Grid step, measured from the first interval.
    pub fn step(&self) -> f64 {
        self.freqs[1] - self.freqs[0]
    }

    /// Whether the grid is uniform to within `rel` of the first step.
    pub fn is_uniform(&self, rel: f64) -> bool {
        let step = self.step();
        self.freqs
            .windows(2)
            .all(|w| ((w[1] - w[0]) - step).abs() <= rel * step.abs())
    }

    /// Linear interpolation of the transmission at frequency `f`, clamped to
    /// the edge values outside the grid.
    pub fn interp(&self, f: f64) -> f64 {
        let n = self.freqs.len();
        if f <= self.freqs[0] {
            return self.values[0];
        }
        if f >= self.freqs[n - 1] {
            return self.values[n - 1];
        }
        let i = match self.freqs.binary_search_by(|x| x.partial_cmp(&f).unwrap()) {
            Ok(i) => return self.values[i],
            Err(i) => i,
        };
        let (f0, f1) = (self.freqs[i - 1], self.freqs[i]);
        let w = (f - f0) / (f1 - f0);
        self.values[i - 1] * (1.0 - w) + self.values[i] * w
    }

    /// Replace the sampled values, keeping grid and metadata.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.freqs.clone(), values, self.meta.clone())
    }
}

/// Uniform frequency grid of `points` samples centered on zero detuning,
/// spanning `span_hz`.
pub fn frequency_grid(span_hz: f64, points: usize) -> Result<Vec<f64>> {
    if !(span_hz > 0.0) || points < 2 {
        return Err(Error::InvalidParams(format!(
            "grid needs span > 0 and at least 2 points, got span {span_hz}, points {points}"
        )));
    }
    let step = span_hz / (points - 1) as f64;
    Ok((0..points).map(|i| -span_hz / 2.0 + step * i as f64).collect())
}
