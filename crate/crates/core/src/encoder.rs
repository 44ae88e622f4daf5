//! Snapshot encoding: every band is blurred by its PSF, weighted by the
//! sensor response and summed into one image, then sensor noise is added.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::binio::{self, ByteReader, ByteWriter};
use crate::cube::HyperCube;
use crate::error::{invalid, Error, Result};
use crate::fft::fft2;
use crate::propagation::PsfStack;

const NIMG_MAGIC: &[u8; 4] = b"NIMG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    None,
}

/// Spectral response table plus additive noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    /// `(wavelength [m], weight)` pairs sorted by wavelength.
    pub response_curve: Vec<(f64, f64)>,
    /// Standard deviation as a fraction of the image maximum.
    pub noise_sigma: f64,
    pub noise_kind: NoiseKind,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            response_curve: vec![(700e-9, 1.0), (1000e-9, 1.0)],
            noise_sigma: 0.01,
            noise_kind: NoiseKind::Gaussian,
        }
    }
}

impl SensorModel {
    pub fn noiseless() -> Self {
        SensorModel {
            noise_kind: NoiseKind::None,
            noise_sigma: 0.0,
            ..SensorModel::default()
        }
    }

    pub fn with_curve(curve: Vec<(f64, f64)>) -> Result<Self> {
        let s = SensorModel {
            response_curve: curve,
            ..SensorModel::noiseless()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.response_curve;
        if t.len() < 2 {
            return invalid("sensor response table needs at least 2 entries");
        }
        if t.iter()
            .any(|&(l, w)| !l.is_finite() || !(w >= 0.0 && w.is_finite()))
        {
            return invalid("sensor response weights must be finite and >= 0");
        }
        if t.windows(2).any(|p| !(p[1].0 > p[0].0)) {
            return invalid("sensor response table must be strictly sorted by wavelength");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return invalid(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        Ok(())
    }
}

/// Piecewise-linear interpolation of the response table `R(λ)`.
pub fn sensor_response(sensor: &SensorModel, wavelength: f64) -> Result<f64> {
    sensor.validate()?;
    let t = &sensor.response_curve;
    let (lo, hi) = (t[0].0, t[t.len() - 1].0);
    let slack = 1e-9 * hi;
    if !(wavelength >= lo - slack && wavelength <= hi + slack) {
        return invalid(format!(
            "wavelength {wavelength} m outside the response table range {lo}..{hi}"
        ));
    }
    let l = wavelength.clamp(lo, hi);
    let k = t.partition_point(|&(x, _)| x <= l).clamp(1, t.len() - 1);
    let (x0, y0) = t[k - 1];
    let (x1, y1) = t[k];
    if l == x0 {
        return Ok(y0);
    }
    Ok(y0 + (y1 - y0) * (l - x0) / (x1 - x0))
}

/// A single-channel sensor image.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
    /// Opaque digest of the settings that produced the image; not serialized.
    pub provenance: String,
}

impl EncodedImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoded image".into()));
        }
        Ok(EncodedImage {
            height,
            width,
            data,
            provenance: String::new(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new(NIMG_MAGIC);
        w.u32(binio::u32_dim(self.height, "height")?);
        w.u32(binio::u32_dim(self.width, "width")?);
        for &v in &self.data {
            w.f32(v as f32);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "NIMG");
        r.expect_magic(NIMG_MAGIC)?;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let count = h
            .checked_mul(w)
            .ok_or_else(|| Error::Invalid("NIMG dimensions overflow".into()))?;
        let data = r.f32_payload(count)?;
        EncodedImage::new(h, w, data.into_iter().map(f64::from).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }

    /// 16-bit grayscale PNG, min-max normalized.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = crate::cube::png16_bytes(&self.data, self.height, self.width)?;
        binio::write_atomic(path, &bytes)
    }
}

/// The linear map `cube ↦ Σ_b R(λ_b) · (P_b ⊗ cube_b)` for a fixed image size,
/// with per-band kernel spectra precomputed.
///
/// Output pixel `q` of band `b` is `Σ_p cube_b[p] · P_b[q − p + c]` where `c` is
/// the PSF grid center, so a delta at `p` reproduces the PSF centered on `p`.
/// Kernel taps falling outside the PSF grid are zero.
pub struct ForwardOperator {
    height: usize,
    width: usize,
    pad_h: usize,
    pad_w: usize,
    weights: Vec<f64>,
    kernel_spectra: Vec<Vec<Complex64>>,
    grid: crate::spectral::SpectralGrid,
}

impl ForwardOperator {
    pub fn new(psfs: &PsfStack, sensor: &SensorModel, height: usize, width: usize) -> Result<Self> {
        let n = psfs.size();
        if height == 0 || width == 0 {
            return invalid("image dimensions must be positive");
        }
        if height > n || width > n {
            return Err(Error::ShapeMismatch(format!(
                "cube {height}x{width} is larger than the {n}x{n} PSF support"
            )));
        }
        let weights = psfs
            .wavelengths()
            .iter()
            .map(|&l| sensor_response(sensor, l))
            .collect::<Result<Vec<_>>>()?;
        let kh = 2 * height - 1;
        let kw = 2 * width - 1;
        let pad_h = kh.next_power_of_two();
        let pad_w = kw.next_power_of_two();
        let c = (n / 2) as isize;
        let kernel_spectra = (0..psfs.bands())
            .into_par_iter()
            .map(|b| {
                let slice = psfs.slice(b);
                let mut buf = vec![Complex64::new(0.0, 0.0); pad_h * pad_w];
                for a in 0..kh {
                    let r = c + a as isize - (height as isize - 1);
                    if r < 0 || r >= n as isize {
                        continue;
                    }
                    for bb in 0..kw {
                        let col = c + bb as isize - (width as isize - 1);
                        if col < 0 || col >= n as isize {
                            continue;
                        }
                        buf[a * pad_w + bb].re = slice[r as usize * n + col as usize];
                    }
                }
                fft2(&mut buf, pad_h, pad_w, FftDirection::Forward);
                buf
            })
            .collect();
        Ok(ForwardOperator {
            height,
            width,
            pad_h,
            pad_w,
            weights,
            kernel_spectra,
            grid: psfs.grid(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.weights.len()
    }

    pub fn grid(&self) -> crate::spectral::SpectralGrid {
        self.grid
    }

    pub fn response_weights(&self) -> &[f64] {
        &self.weights
    }

    fn padded(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.pad_h * self.pad_w];
        for r in 0..self.height {
            for c in 0..self.width {
                buf[r * self.pad_w + c].re = plane[r * self.width + c];
            }
        }
        fft2(&mut buf, self.pad_h, self.pad_w, FftDirection::Forward);
        buf
    }

    /// Applies the operator to band-sequential data of length `H·W·B`.
    pub fn apply(&self, cube: &[f64]) -> Vec<f64> {
        let plane = self.height * self.width;
        assert_eq!(cube.len(), plane * self.bands());
        let scale = 1.0 / (self.pad_h * self.pad_w) as f64;
        let per_band: Vec<Vec<f64>> = (0..self.bands())
            .into_par_iter()
            .map(|b| {
                let w = self.weights[b];
                if w == 0.0 {
                    return vec![0.0; plane];
                }
                let mut buf = self.padded(&cube[b * plane..(b + 1) * plane]);
                for (x, k) in buf.iter_mut().zip(&self.kernel_spectra[b]) {
                    *x *= *k;
                }
                fft2(&mut buf, self.pad_h, self.pad_w, FftDirection::Inverse);
                let mut out = Vec::with_capacity(plane);
                for r in 0..self.height {
                    for c in 0..self.width {
                        let v = buf[(r + self.height - 1) * self.pad_w + c + self.width - 1].re;
                        out.push(v * scale * w);
                    }
                }
                out
            })
            .collect();
        // Fixed band order keeps the reduction reproducible.
        let mut sum = vec![0.0; plane];
        for band in &per_band {
            for (s, v) in sum.iter_mut().zip(band) {
                *s += v;
            }
        }
        sum
    }

    /// Exact transpose of [`apply`](Self::apply): per band, correlation with the
    /// PSF scaled by the response weight.
    pub fn adjoint(&self, image: &[f64]) -> Vec<f64> {
        let plane = self.height * self.width;
        assert_eq!(image.len(), plane);
        let scale = 1.0 / (self.pad_h * self.pad_w) as f64;
        let spectrum = self.padded(image);
        let per_band: Vec<Vec<f64>> = (0..self.bands())
            .into_par_iter()
            .map(|b| {
                let w = self.weights[b];
                if w == 0.0 {
                    return vec![0.0; plane];
                }
                let mut buf: Vec<Complex64> = spectrum
                    .iter()
                    .zip(&self.kernel_spectra[b])
                    .map(|(y, k)| y * k.conj())
                    .collect();
                fft2(&mut buf, self.pad_h, self.pad_w, FftDirection::Inverse);
                let mut out = Vec::with_capacity(plane);
                for r in 0..self.height {
                    let rr = (r + self.pad_h - (self.height - 1)) % self.pad_h;
                    for c in 0..self.width {
                        let cc = (c + self.pad_w - (self.width - 1)) % self.pad_w;
                        out.push(buf[rr * self.pad_w + cc].re * scale * w);
                    }
                }
                out
            })
            .collect();
        per_band.concat()
    }
}

fn provenance(psfs: &PsfStack, sensor: &SensorModel, seed: u64) -> String {
    let mut h = DefaultHasher::new();
    psfs.size().hash(&mut h);
    psfs.bands().hash(&mut h);
    psfs.grid().start().to_bits().hash(&mut h);
    psfs.grid().step().to_bits().hash(&mut h);
    for &(l, w) in &sensor.response_curve {
        l.to_bits().hash(&mut h);
        w.to_bits().hash(&mut h);
    }
    sensor.noise_sigma.to_bits().hash(&mut h);
    (sensor.noise_kind == NoiseKind::Gaussian).hash(&mut h);
    seed.hash(&mut h);
    format!("{:016x}", h.finish())
}

/// Noiseless forward model.
pub fn encode_noiseless(
    cube: &HyperCube,
    psfs: &PsfStack,
    sensor: &SensorModel,
) -> Result<EncodedImage> {
    cube.grid().ensure_matches(&psfs.grid())?;
    let op = ForwardOperator::new(psfs, sensor, cube.height(), cube.width())?;
    EncodedImage::new(cube.height(), cube.width(), op.apply(cube.data()))
}

/// Forms the snapshot image and adds noise according to `sensor`.
pub fn encode(
    cube: &HyperCube,
    psfs: &PsfStack,
    sensor: &SensorModel,
    seed: u64,
) -> Result<EncodedImage> {
    let clean = encode_noiseless(cube, psfs, sensor)?;
    let mut out = add_noise(&clean, sensor, seed)?;
    out.provenance = provenance(psfs, sensor, seed);
    Ok(out)
}

/// Adds i.i.d. Gaussian noise with standard deviation `noise_sigma · max(image)`.
pub fn add_noise(image: &EncodedImage, sensor: &SensorModel, seed: u64) -> Result<EncodedImage> {
    if !(sensor.noise_sigma >= 0.0 && sensor.noise_sigma.is_finite()) {
        return invalid(format!(
            "noise sigma must be >= 0, got {}",
            sensor.noise_sigma
        ));
    }
    let peak = image
        .data
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let std = sensor.noise_sigma * peak;
    if sensor.noise_kind == NoiseKind::None || std == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = image
        .data
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    let mut out = EncodedImage::new(image.height, image.width, data)?;
    out.provenance = image.provenance.clone();
    Ok(out)
}
