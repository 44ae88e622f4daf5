use crate::error::{invalid, Error, Result};

/// Evenly spaced band centers `start + k·step`, `k = 0..bands`, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGrid {
    start: f64,
    step: f64,
    bands: usize,
}

impl SpectralGrid {
    /// A single-band grid may use `step = 0`.
    pub fn new(start: f64, step: f64, bands: usize) -> Result<Self> {
        if bands == 0 {
            return invalid("spectral grid needs at least one band");
        }
        if !(start > 0.0 && start.is_finite()) {
            return invalid(format!("first wavelength must be positive, got {start}"));
        }
        let step_ok = if bands == 1 {
            step >= 0.0 && step.is_finite()
        } else {
            step > 0.0 && step.is_finite()
        };
        if !step_ok {
            return invalid(format!("wavelength step must be positive, got {step}"));
        }
        Ok(SpectralGrid { start, step, bands })
    }

    /// 700–1000 nm in 10 nm steps.
    pub fn nir_default() -> Self {
        SpectralGrid {
            start: 700e-9,
            step: 10e-9,
            bands: 31,
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn wavelength(&self, band: usize) -> f64 {
        self.start + band as f64 * self.step
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        (0..self.bands).map(|k| self.wavelength(k)).collect()
    }

    /// Index of the band centered at `wavelength`, if any.
    pub fn band_of(&self, wavelength: f64) -> Option<usize> {
        (0..self.bands).find(|&k| (self.wavelength(k) - wavelength).abs() <= 1e-6 * self.start)
    }

    pub fn describe(&self) -> String {
        if self.bands == 1 {
            format!("1 band at {:.3} nm", self.start * 1e9)
        } else {
            format!(
                "{} bands {:.3}-{:.3} nm step {:.3} nm",
                self.bands,
                self.start * 1e9,
                self.wavelength(self.bands - 1) * 1e9,
                self.step * 1e9
            )
        }
    }

    /// Errors unless both grids have the same band count and matching centers.
    pub fn ensure_matches(&self, other: &SpectralGrid) -> Result<()> {
        let tol = 1e-6 * self.start;
        let same = self.bands == other.bands
            && (self.start - other.start).abs() <= tol
            && (0..self.bands).all(|k| (self.wavelength(k) - other.wavelength(k)).abs() <= tol);
        if same {
            Ok(())
        } else {
            Err(Error::WavelengthMismatch {
                left: self.describe(),
                right: other.describe(),
            })
        }
    }
}
