//! PSNR, SSIM and spectral signatures.

use serde::Serialize;

use crate::cube::HyperCube;
use crate::error::{invalid, Error, Result};

/// Mean squared error of two equally sized buffers.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} values",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(peak² / MSE)`; `f64::INFINITY` when the inputs are identical.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return invalid(format!("PSNR peak must be positive, got {peak}"));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsnrMode {
    /// One MSE over every voxel.
    #[default]
    Joint,
    /// Mean of the per-band PSNR values.
    PerBandMean,
}

pub fn psnr_cube(a: &HyperCube, b: &HyperCube, peak: f64, mode: PsnrMode) -> Result<f64> {
    check_cubes(a, b)?;
    match mode {
        PsnrMode::Joint => psnr(a.data(), b.data(), peak),
        PsnrMode::PerBandMean => {
            let mut total = 0.0;
            for k in 0..a.bands() {
                total += psnr(a.band(k), b.band(k), peak)?;
            }
            Ok(total / a.bands() as f64)
        }
    }
}

fn check_cubes(a: &HyperCube, b: &HyperCube) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.bands(),
            b.height(),
            b.width(),
            b.bands()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    fn validate(&self) -> Result<()> {
        if self.window == 0
            || !(self.sigma > 0.0)
            || !(self.k1 > 0.0)
            || !(self.k2 > 0.0)
            || !(self.dynamic_range > 0.0)
        {
            return invalid(format!("invalid SSIM parameters {self:?}"));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Separable valid-mode filtering of an `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(t, g)| g * x[r * w + c + t])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(t, g)| g * rows[(r + t) * ow + c])
                .sum();
        }
    }
    out
}

/// Local SSIM statistic for one window given its weighted moments.
pub(crate) fn ssim_from_moments(
    mu_a: f64,
    mu_b: f64,
    ea2: f64,
    eb2: f64,
    eab: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    let var_a = ea2 - mu_a * mu_a;
    let var_b = eb2 - mu_b * mu_b;
    let cov = eab - mu_a * mu_b;
    ((2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

/// Mean SSIM over every fully contained Gaussian window.
pub fn ssim(a: &[f64], b: &[f64], height: usize, width: usize, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    if a.len() != height * width || b.len() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "{} and {} values for a {height}x{width} image",
            a.len(),
            b.len()
        )));
    }
    if height < params.window || width < params.window {
        return invalid(format!(
            "image {height}x{width} is smaller than the {0}x{0} SSIM window",
            params.window
        ));
    }
    let taps = params.taps();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(a, height, width, &taps);
    let mu_b = filter_valid(b, height, width, &taps);
    let ea2 = filter_valid(&prod(a, a), height, width, &taps);
    let eb2 = filter_valid(&prod(b, b), height, width, &taps);
    let eab = filter_valid(&prod(a, b), height, width, &taps);
    let (c1, c2) = (params.c1(), params.c2());
    let total: f64 = (0..mu_a.len())
        .map(|i| ssim_from_moments(mu_a[i], mu_b[i], ea2[i], eb2[i], eab[i], c1, c2))
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Mean of the per-band SSIM values.
pub fn ssim_cube(a: &HyperCube, b: &HyperCube, params: &SsimParams) -> Result<f64> {
    Ok(ssim_per_band(a, b, params)?.iter().sum::<f64>() / a.bands() as f64)
}

pub fn ssim_per_band(a: &HyperCube, b: &HyperCube, params: &SsimParams) -> Result<Vec<f64>> {
    check_cubes(a, b)?;
    (0..a.bands())
        .map(|k| ssim(a.band(k), b.band(k), a.height(), a.width(), params))
        .collect()
}

/// `(wavelength [m], value)` at one pixel across all bands.
pub fn spectral_signature(cube: &HyperCube, row: usize, col: usize) -> Result<Vec<(f64, f64)>> {
    if row >= cube.height() || col >= cube.width() {
        return invalid(format!(
            "point ({row}, {col}) outside the {}x{} frame",
            cube.height(),
            cube.width()
        ));
    }
    Ok(cube
        .grid()
        .wavelengths()
        .into_iter()
        .enumerate()
        .map(|(b, l)| (l, cube.get(b, row, col)))
        .collect())
}

pub fn signature_csv(signature: &[(f64, f64)]) -> String {
    let mut s = String::from("wavelength_nm,value\n");
    for &(l, v) in signature {
        s.push_str(&format!("{:.3},{v}\n", l * 1e9));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandMetrics {
    pub wavelength_nm: f64,
    /// `null` in JSON when the band is reproduced exactly.
    pub psnr_db: f64,
    pub ssim: f64,
}

/// The JSON document emitted by `nirsnap metrics`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub psnr_db: f64,
    pub psnr_band_mean_db: f64,
    pub ssim: f64,
    pub per_band: Vec<BandMetrics>,
}

impl MetricsReport {
    pub fn compute(
        recon: &HyperCube,
        truth: &HyperCube,
        peak: f64,
        params: &SsimParams,
    ) -> Result<Self> {
        check_cubes(recon, truth)?;
        let ssims = ssim_per_band(recon, truth, params)?;
        let per_band = truth
            .grid()
            .wavelengths()
            .into_iter()
            .enumerate()
            .map(|(b, l)| {
                Ok(BandMetrics {
                    wavelength_nm: l * 1e9,
                    psnr_db: psnr(recon.band(b), truth.band(b), peak)?,
                    ssim: ssims[b],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricsReport {
            psnr_db: psnr_cube(recon, truth, peak, PsnrMode::Joint)?,
            psnr_band_mean_db: psnr_cube(recon, truth, peak, PsnrMode::PerBandMean)?,
            ssim: ssims.iter().sum::<f64>() / ssims.len() as f64,
            per_band,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}
