//! Point-source illumination, DOE modulation and single-FFT Fresnel
//! propagation to the sensor.
//!
//! The chain for one wavelength is
//!
//! ```text
//! U1 = exp[i (2π/λ) r²/z0]                      point source at z0
//! U2 = A0 · U1 · exp[i (2π/λ)(n_λ − 1) h]        inside the aperture, 0 outside
//! U3 = U2 · exp[i (2π/λ) r²/(2f)]
//! P  = |F{U3}|² / Σ|F{U3}|²                     centered DFT
//! ```
//!
//! The FFT output grid is used directly as the sensor grid. Its physical pitch
//! is `λ f / (N Δx)`, so it changes with wavelength; `physical_rescale` resamples
//! every slice onto the pitch of the shortest wavelength.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, ByteReader, ByteWriter};
use crate::doe::{HeightMap, MaterialModel, DEFAULT_GRID_SIZE, DEFAULT_PIXEL_PITCH};
use crate::error::{invalid, Error, Result};
use crate::fft::centered_fft2;
use crate::spectral::SpectralGrid;

const NPSF_MAGIC: &[u8; 4] = b"NPSF";

/// Geometry and spectral sampling of the imaging system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticalConfig {
    pub source_distance: f64,
    pub propagation_distance: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_step: f64,
    pub grid_size: usize,
    pub pixel_pitch: f64,
    /// Use `r²/(2 z0)` in the source phase instead of `r²/z0`.
    pub paraxial_half_factor: bool,
    /// Resample each slice onto the output pitch of `lambda_min`.
    pub physical_rescale: bool,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        OpticalConfig {
            source_distance: 1.0,
            propagation_distance: 0.05,
            lambda_min: 700e-9,
            lambda_max: 1000e-9,
            lambda_step: 10e-9,
            grid_size: DEFAULT_GRID_SIZE,
            pixel_pitch: DEFAULT_PIXEL_PITCH,
            paraxial_half_factor: false,
            physical_rescale: false,
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.source_distance > 0.0 && self.source_distance.is_finite()) {
            return invalid(format!(
                "source distance must be positive, got {}",
                self.source_distance
            ));
        }
        if !(self.propagation_distance > 0.0 && self.propagation_distance.is_finite()) {
            return invalid(format!(
                "propagation distance must be positive, got {}",
                self.propagation_distance
            ));
        }
        if self.grid_size == 0 || !self.grid_size.is_multiple_of(2) {
            return invalid(format!(
                "grid size must be even and positive, got {}",
                self.grid_size
            ));
        }
        if !(self.pixel_pitch > 0.0 && self.pixel_pitch.is_finite()) {
            return invalid(format!(
                "pixel pitch must be positive, got {}",
                self.pixel_pitch
            ));
        }
        self.band_count().map(|_| ())
    }

    /// Number of bands `(λk − λ0)/Δλ + 1`, which must be an integer.
    pub fn band_count(&self) -> Result<usize> {
        band_count(self.lambda_min, self.lambda_max, self.lambda_step)
    }

    pub fn spectral_grid(&self) -> Result<SpectralGrid> {
        SpectralGrid::new(self.lambda_min, self.lambda_step, self.band_count()?)
    }
}

pub(crate) fn band_count(lambda_min: f64, lambda_max: f64, step: f64) -> Result<usize> {
    if !(lambda_min > 0.0 && lambda_min < lambda_max && lambda_max.is_finite()) {
        return invalid(format!(
            "wavelength range must satisfy 0 < min < max, got {lambda_min}..{lambda_max}"
        ));
    }
    if !(step > 0.0 && step.is_finite()) {
        return invalid(format!("wavelength step must be positive, got {step}"));
    }
    let bands = (lambda_max - lambda_min) / step;
    if (bands - bands.round()).abs() > 1e-6 {
        return invalid(format!(
            "wavelength range {lambda_min}..{lambda_max} is not a whole number of {step} steps"
        ));
    }
    Ok(bands.round() as usize + 1)
}

/// A sampled scalar wavefront at a single wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub size: usize,
    pub values: Vec<Complex64>,
    pub pixel_pitch: f64,
    pub wavelength: f64,
}

impl ComplexField {
    pub fn new(
        size: usize,
        values: Vec<Complex64>,
        pixel_pitch: f64,
        wavelength: f64,
    ) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {size}x{size} field",
                values.len()
            )));
        }
        if !(wavelength > 0.0) || !(pixel_pitch > 0.0) {
            return invalid("field wavelength and pitch must be positive");
        }
        if values
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::NonFinite("complex field".into()));
        }
        Ok(ComplexField {
            size,
            values,
            pixel_pitch,
            wavelength,
        })
    }

    /// Squared distance (m²) of pixel `(i, j)` from the grid center.
    fn r2(&self, i: usize, j: usize) -> f64 {
        r2_at(i, j, self.size, self.pixel_pitch)
    }
}

fn r2_at(i: usize, j: usize, size: usize, pitch: f64) -> f64 {
    let c = (size / 2) as f64;
    let y = (i as f64 - c) * pitch;
    let x = (j as f64 - c) * pitch;
    x * x + y * y
}

/// Spherical wave from an on-axis point source at `source_distance`.
pub fn point_source_field(config: &OpticalConfig, wavelength: f64) -> Result<ComplexField> {
    if !(wavelength > 0.0 && wavelength.is_finite()) {
        return invalid(format!("wavelength must be positive, got {wavelength}"));
    }
    if !(config.source_distance > 0.0) {
        return invalid(format!(
            "source distance must be positive, got {}",
            config.source_distance
        ));
    }
    let n = config.grid_size;
    let denom = if config.paraxial_half_factor {
        2.0 * config.source_distance
    } else {
        config.source_distance
    };
    let k = 2.0 * PI / wavelength;
    let values = (0..n * n)
        .map(|idx| {
            let r2 = r2_at(idx / n, idx % n, n, config.pixel_pitch);
            Complex64::from_polar(1.0, k * r2 / denom)
        })
        .collect();
    ComplexField::new(n, values, config.pixel_pitch, wavelength)
}

/// Multiplies by `A0 exp[i (2π/λ)(n_λ − 1) h]` inside the aperture and zeroes the rest.
pub fn apply_doe(
    field: &ComplexField,
    map: &HeightMap,
    material: &MaterialModel,
) -> Result<ComplexField> {
    if field.size != map.size() {
        return Err(Error::ShapeMismatch(format!(
            "field grid {} vs height map grid {}",
            field.size,
            map.size()
        )));
    }
    if (field.pixel_pitch - map.pixel_pitch()).abs() > 1e-12 * map.pixel_pitch() {
        return Err(Error::ShapeMismatch(format!(
            "field pitch {} vs height map pitch {}",
            field.pixel_pitch,
            map.pixel_pitch()
        )));
    }
    let n_lambda = material.refractive_index(field.wavelength)?;
    let k = 2.0 * PI / field.wavelength * (n_lambda - 1.0);
    let a0 = map.amplitude();
    let n = field.size;
    let values = field
        .values
        .iter()
        .enumerate()
        .map(|(idx, &u)| {
            let (i, j) = (idx / n, idx % n);
            if map.in_aperture(i, j) {
                u * Complex64::from_polar(a0, k * map.height(i, j))
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    ComplexField::new(n, values, field.pixel_pitch, field.wavelength)
}

/// Applies the sensor-side quadratic phase for distance `f`, a centered DFT,
/// and returns the unit-sum intensity.
pub fn propagate_to_sensor(field: &ComplexField, f: f64) -> Result<Vec<f64>> {
    if !(f > 0.0 && f.is_finite()) {
        return invalid(format!("propagation distance must be positive, got {f}"));
    }
    let n = field.size;
    let k = 2.0 * PI / field.wavelength / (2.0 * f);
    let mut buf: Vec<Complex64> = field
        .values
        .iter()
        .enumerate()
        .map(|(idx, &u)| u * Complex64::from_polar(1.0, k * field.r2(idx / n, idx % n)))
        .collect();
    centered_fft2(&mut buf, n, n);
    let intensity: Vec<f64> = buf.iter().map(|c| c.norm_sqr()).collect();
    normalize_unit_sum(intensity)
}

fn normalize_unit_sum(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NonFinite(format!("intensity sum is {total}")));
    }
    for x in &mut v {
        *x /= total;
    }
    Ok(v)
}

/// Bilinearly resamples a centered slice whose pitch scales with `wavelength`
/// onto the pitch of `reference_wavelength`.
fn rescale_slice(
    slice: &[f64],
    n: usize,
    wavelength: f64,
    reference_wavelength: f64,
) -> Result<Vec<f64>> {
    let c = (n / 2) as f64;
    let ratio = reference_wavelength / wavelength;
    let sample = |r: isize, col: isize| -> f64 {
        if r < 0 || col < 0 || r >= n as isize || col >= n as isize {
            0.0
        } else {
            slice[r as usize * n + col as usize]
        }
    };
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let si = c + (i as f64 - c) * ratio;
        let i0 = si.floor();
        let fi = si - i0;
        for j in 0..n {
            let sj = c + (j as f64 - c) * ratio;
            let j0 = sj.floor();
            let fj = sj - j0;
            let (i0, j0) = (i0 as isize, j0 as isize);
            out[i * n + j] = (1.0 - fi) * (1.0 - fj) * sample(i0, j0)
                + (1.0 - fi) * fj * sample(i0, j0 + 1)
                + fi * (1.0 - fj) * sample(i0 + 1, j0)
                + fi * fj * sample(i0 + 1, j0 + 1);
        }
    }
    normalize_unit_sum(out)
}

/// Per-wavelength unit-sum PSF kernels on a common `N × N` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    size: usize,
    kernels: Vec<f64>,
    grid: SpectralGrid,
}

impl PsfStack {
    /// Unit-sum tolerance accepted by the constructor; f32 storage alone
    /// perturbs the sum by far less than this.
    pub const SUM_TOLERANCE: f64 = 1e-4;

    pub fn new(size: usize, kernels: Vec<f64>, grid: SpectralGrid) -> Result<Self> {
        let b = grid.bands();
        if size == 0 || b == 0 || kernels.len() != b * size * size {
            return Err(Error::ShapeMismatch(format!(
                "{} kernel values for {b} slices of {size}x{size}",
                kernels.len()
            )));
        }
        if kernels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PSF stack".into()));
        }
        if let Some(v) = kernels.iter().find(|v| **v < 0.0) {
            return invalid(format!("PSF entries must be nonnegative, found {v}"));
        }
        for (s, chunk) in kernels.chunks_exact(size * size).enumerate() {
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
                return invalid(format!("PSF slice {s} sums to {sum}, expected 1"));
            }
        }
        Ok(PsfStack {
            size,
            kernels,
            grid,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bands(&self) -> usize {
        self.grid.bands()
    }

    pub fn grid(&self) -> SpectralGrid {
        self.grid
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        self.grid.wavelengths()
    }

    pub fn slice(&self, band: usize) -> &[f64] {
        let n2 = self.size * self.size;
        &self.kernels[band * n2..(band + 1) * n2]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new(NPSF_MAGIC);
        w.u32(binio::u32_dim(self.size, "PSF grid size")?);
        w.u32(binio::u32_dim(self.bands(), "band count")?);
        w.f64(self.grid.start());
        w.f64(self.grid.step());
        for &v in &self.kernels {
            w.f32(v as f32);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "NPSF");
        r.expect_magic(NPSF_MAGIC)?;
        let n = r.u32()? as usize;
        let b = r.u32()? as usize;
        let l0 = r.f64()?;
        let dl = r.f64()?;
        let count = n
            .checked_mul(n)
            .and_then(|x| x.checked_mul(b))
            .ok_or_else(|| Error::Invalid("NPSF dimensions overflow".into()))?;
        let data = r.f32_payload(count)?;
        PsfStack::new(
            n,
            data.into_iter().map(f64::from).collect(),
            SpectralGrid::new(l0, dl, b)?,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

/// Computes one normalized PSF per configured wavelength.
pub fn compute_psf_stack(
    config: &OpticalConfig,
    map: &HeightMap,
    material: &MaterialModel,
) -> Result<PsfStack> {
    config.validate()?;
    if map.size() != config.grid_size {
        return Err(Error::ShapeMismatch(format!(
            "height map grid {} vs configured grid {}",
            map.size(),
            config.grid_size
        )));
    }
    let grid = config.spectral_grid()?;
    let wavelengths = grid.wavelengths();
    let lambda_ref = wavelengths[0];
    let slices: Vec<Vec<f64>> = wavelengths
        .par_iter()
        .map(|&lambda| {
            let u1 = point_source_field(config, lambda)?;
            let u2 = apply_doe(&u1, map, material)?;
            let p = propagate_to_sensor(&u2, config.propagation_distance)?;
            if config.physical_rescale {
                rescale_slice(&p, config.grid_size, lambda, lambda_ref)
            } else {
                Ok(p)
            }
        })
        .collect::<Result<_>>()?;
    PsfStack::new(config.grid_size, slices.concat(), grid)
}
