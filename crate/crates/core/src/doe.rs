//! Diffractive optical element: radial profile, height map, quantization,
//! fabrication error and material dispersion.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{self, ByteReader, ByteWriter};
use crate::error::{invalid, Error, Result};

/// Number of trainable radial samples.
pub const PROFILE_LEN: usize = 512;

pub const DEFAULT_PIXEL_PITCH: f64 = 4e-6;
pub const DEFAULT_GRID_SIZE: usize = 1024;
/// Half of the 4.096 mm clear aperture.
pub const DEFAULT_APERTURE_RADIUS: f64 = 2.048e-3;
/// Recorded for completeness; a uniform substrate only adds a constant phase.
pub const SUBSTRATE_THICKNESS: f64 = 2e-3;

const NDOE_MAGIC: &[u8; 4] = b"NDOE";

/// Heights along the radius, sampled every `sample_pitch` meters from the center.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    samples: Vec<f64>,
    sample_pitch: f64,
}

impl RadialProfile {
    pub fn new(samples: Vec<f64>, sample_pitch: f64) -> Result<Self> {
        if samples.len() != PROFILE_LEN {
            return invalid(format!(
                "radial profile must have exactly {PROFILE_LEN} samples, got {}",
                samples.len()
            ));
        }
        if !(sample_pitch > 0.0 && sample_pitch.is_finite()) {
            return invalid(format!("sample pitch must be positive, got {sample_pitch}"));
        }
        if let Some((k, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return invalid(format!(
                "profile sample {k} = {v} is not a finite height >= 0"
            ));
        }
        Ok(RadialProfile {
            samples,
            sample_pitch,
        })
    }

    pub fn constant(height: f64, sample_pitch: f64) -> Result<Self> {
        Self::new(vec![height; PROFILE_LEN], sample_pitch)
    }

    /// A wrapped diffractive lens that cancels the sensor-side quadratic phase
    /// `π r²/(λ f)` at `design_wavelength`, giving a focused spot there and
    /// progressively defocused kernels elsewhere in the band.
    pub fn fresnel_lens(
        design_wavelength: f64,
        focal_length: f64,
        material: &MaterialModel,
        sample_pitch: f64,
    ) -> Result<Self> {
        let n = material.refractive_index(design_wavelength)?;
        let wrap_depth = design_wavelength / (n - 1.0);
        let two_pi = 2.0 * std::f64::consts::PI;
        let samples = (0..PROFILE_LEN)
            .map(|k| {
                let r = k as f64 * sample_pitch;
                let phase = -std::f64::consts::PI * r * r / (design_wavelength * focal_length);
                phase.rem_euclid(two_pi) / two_pi * wrap_depth
            })
            .collect();
        Self::new(samples, sample_pitch)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_pitch(&self) -> f64 {
        self.sample_pitch
    }

    /// Checks the upper bound that depends on the fabrication depth.
    pub fn check_depth(&self, total_depth: f64) -> Result<()> {
        match self.samples.iter().position(|&h| h > total_depth) {
            Some(k) => invalid(format!(
                "profile sample {k} = {} exceeds total depth {total_depth}",
                self.samples[k]
            )),
            None => Ok(()),
        }
    }

    /// Parses one height (meters) per non-empty line.
    pub fn from_text(text: &str, sample_pitch: f64) -> Result<Self> {
        let mut samples = Vec::with_capacity(PROFILE_LEN);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| {
                Error::Invalid(format!(
                    "profile line {}: cannot parse {line:?}",
                    lineno + 1
                ))
            })?;
            samples.push(v);
        }
        Self::new(samples, sample_pitch)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(PROFILE_LEN * 24);
        for v in &self.samples {
            writeln!(s, "{v:e}").unwrap();
        }
        s
    }

    pub fn load_text(path: &Path, sample_pitch: f64) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?, sample_pitch)
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, self.to_text().as_bytes())
    }
}

/// DOE surface `h(x, y)` on an `N × N` grid with a centered circular aperture.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    size: usize,
    heights: Vec<f64>,
    pixel_pitch: f64,
    aperture_radius: f64,
    amplitude: f64,
}

impl HeightMap {
    pub fn new(
        size: usize,
        heights: Vec<f64>,
        pixel_pitch: f64,
        aperture_radius: f64,
        amplitude: f64,
    ) -> Result<Self> {
        if size == 0 || !size.is_multiple_of(2) {
            return invalid(format!("grid size must be even and positive, got {size}"));
        }
        if heights.len() != size * size {
            return Err(Error::ShapeMismatch(format!(
                "{} heights for a {size}x{size} grid",
                heights.len()
            )));
        }
        if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
            return invalid(format!("pixel pitch must be positive, got {pixel_pitch}"));
        }
        if !(aperture_radius > 0.0 && aperture_radius.is_finite()) {
            return invalid(format!(
                "aperture radius must be positive, got {aperture_radius}"
            ));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return invalid(format!(
                "amplitude must be finite and >= 0, got {amplitude}"
            ));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(Error::NonFinite("height map".into()));
        }
        let map = HeightMap {
            size,
            heights,
            pixel_pitch,
            aperture_radius,
            amplitude,
        };
        for i in 0..size {
            for j in 0..size {
                if !map.in_aperture(i, j) && map.heights[i * size + j] != 0.0 {
                    return invalid(format!(
                        "pixel ({i}, {j}) lies outside the aperture but has nonzero height"
                    ));
                }
            }
        }
        Ok(map)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn height(&self, i: usize, j: usize) -> f64 {
        self.heights[i * self.size + j]
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn aperture_radius(&self) -> f64 {
        self.aperture_radius
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return invalid(format!(
                "amplitude must be finite and >= 0, got {amplitude}"
            ));
        }
        self.amplitude = amplitude;
        Ok(self)
    }

    /// Distance in meters of pixel `(i, j)` from the grid center `(N/2, N/2)`.
    pub fn radius_at(&self, i: usize, j: usize) -> f64 {
        pixel_radius(i, j, self.size, self.pixel_pitch)
    }

    pub fn in_aperture(&self, i: usize, j: usize) -> bool {
        self.radius_at(i, j) <= self.aperture_radius
    }

    /// Applies `f` to every in-aperture height; outside pixels stay zero.
    pub fn map_in_aperture(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        let mut heights = self.heights.clone();
        for i in 0..self.size {
            for j in 0..self.size {
                if self.in_aperture(i, j) {
                    let k = i * self.size + j;
                    heights[k] = f(heights[k]);
                }
            }
        }
        HeightMap::new(
            self.size,
            heights,
            self.pixel_pitch,
            self.aperture_radius,
            self.amplitude,
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new(NDOE_MAGIC);
        w.u32(binio::u32_dim(self.size, "grid size")?);
        w.f64(self.pixel_pitch);
        w.f64(self.aperture_radius);
        for &h in &self.heights {
            w.f32(h as f32);
        }
        Ok(w.buf)
    }

    /// Parses an NDOE buffer. The amplitude is not stored and loads as 1.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "NDOE");
        r.expect_magic(NDOE_MAGIC)?;
        let n = r.u32()? as usize;
        let pitch = r.f64()?;
        let radius = r.f64()?;
        let count = n
            .checked_mul(n)
            .ok_or_else(|| Error::Invalid(format!("grid size {n} overflows")))?;
        let heights = r.f32_payload(count)?;
        HeightMap::new(
            n,
            heights.into_iter().map(f64::from).collect(),
            pitch,
            radius,
            1.0,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

pub(crate) fn pixel_radius(i: usize, j: usize, size: usize, pitch: f64) -> f64 {
    let c = (size / 2) as f64;
    let dy = i as f64 - c;
    let dx = j as f64 - c;
    (dx * dx + dy * dy).sqrt() * pitch
}

/// Dispersion model of the DOE substrate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaterialModel {
    /// Three-term Malitson Sellmeier equation for fused silica.
    #[default]
    SellmeierFusedSilica,
    Constant {
        constant_index: f64,
    },
}

const MALITSON_B: [f64; 3] = [0.6961663, 0.4079426, 0.8974794];
const MALITSON_C: [f64; 3] = [0.0684043, 0.1162414, 9.896161];

impl MaterialModel {
    pub fn refractive_index(&self, wavelength: f64) -> Result<f64> {
        if !(400e-9..=2000e-9).contains(&wavelength) {
            return invalid(format!(
                "wavelength {wavelength} m outside the supported 400-2000 nm range"
            ));
        }
        match *self {
            MaterialModel::SellmeierFusedSilica => {
                let l2 = (wavelength * 1e6).powi(2);
                let n2 = 1.0
                    + MALITSON_B
                        .iter()
                        .zip(&MALITSON_C)
                        .map(|(b, c)| b * l2 / (l2 - c * c))
                        .sum::<f64>();
                Ok(n2.sqrt())
            }
            MaterialModel::Constant { constant_index } => {
                if !(constant_index > 1.0 && constant_index.is_finite()) {
                    return invalid(format!(
                        "constant index must exceed 1, got {constant_index}"
                    ));
                }
                Ok(constant_index)
            }
        }
    }
}

/// Lithographic quantization and etch error model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoeFabSpec {
    pub levels: u32,
    pub total_depth: f64,
    pub error_bound: f64,
}

impl Default for DoeFabSpec {
    fn default() -> Self {
        DoeFabSpec {
            levels: 16,
            total_depth: 2.2192e-6,
            error_bound: 40e-9,
        }
    }
}

impl DoeFabSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return invalid(format!("levels must be >= 2, got {}", self.levels));
        }
        if !(self.total_depth > 0.0 && self.total_depth.is_finite()) {
            return invalid(format!(
                "total depth must be positive, got {}",
                self.total_depth
            ));
        }
        if !(self.error_bound >= 0.0 && self.error_bound.is_finite()) {
            return invalid(format!(
                "error bound must be >= 0, got {}",
                self.error_bound
            ));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.total_depth / self.levels as f64
    }

    /// Level index for a height in `[0, total_depth]`: nearest level, ties up,
    /// with `total_depth` itself wrapping to level 0.
    pub fn level_of(&self, height: f64) -> u32 {
        let k = (height / self.step() + 0.5).floor() as u32;
        if k >= self.levels {
            0
        } else {
            k
        }
    }
}

/// Builds the rotationally symmetric height map by sweeping `profile` around
/// the grid center with nearest-neighbor radial lookup.
pub fn rotate_radial_profile(
    profile: &RadialProfile,
    grid_size: usize,
    pixel_pitch: f64,
    aperture_radius: f64,
) -> Result<HeightMap> {
    if grid_size == 0 || !grid_size.is_multiple_of(2) {
        return invalid(format!(
            "grid size must be even and positive, got {grid_size}"
        ));
    }
    if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
        return invalid(format!("pixel pitch must be positive, got {pixel_pitch}"));
    }
    let half_extent = grid_size as f64 * pixel_pitch / 2.0;
    if !(aperture_radius > 0.0) || aperture_radius > half_extent {
        return invalid(format!(
            "aperture radius {aperture_radius} must lie in (0, {half_extent}]"
        ));
    }
    let samples = profile.samples();
    let mut heights = vec![0.0; grid_size * grid_size];
    for i in 0..grid_size {
        for j in 0..grid_size {
            let r = pixel_radius(i, j, grid_size, pixel_pitch);
            if r <= aperture_radius {
                let idx = ((r / profile.sample_pitch()).round() as usize).min(PROFILE_LEN - 1);
                heights[i * grid_size + j] = samples[idx];
            }
        }
    }
    HeightMap::new(grid_size, heights, pixel_pitch, aperture_radius, 1.0)
}

pub fn quantize_height(map: &HeightMap, spec: &DoeFabSpec) -> Result<HeightMap> {
    spec.validate()?;
    if let Some(k) = map
        .heights()
        .iter()
        .position(|&h| !(0.0..=spec.total_depth).contains(&h))
    {
        return invalid(format!(
            "height {} at pixel {k} lies outside [0, {}]",
            map.heights()[k],
            spec.total_depth
        ));
    }
    let step = spec.step();
    map.map_in_aperture(|h| spec.level_of(h) as f64 * step)
}

fn on_level_grid(h: f64, spec: &DoeFabSpec) -> bool {
    let x = h / spec.step();
    (x - x.round()).abs() <= 1e-9 && x.round() >= 0.0 && x.round() < spec.levels as f64
}

/// Perturbs each in-aperture pixel by an independent draw from
/// `U[-error_bound, +error_bound]`, clamped below at zero.
pub fn apply_fabrication_error(map: &HeightMap, spec: &DoeFabSpec, seed: u64) -> Result<HeightMap> {
    spec.validate()?;
    if let Some(k) = map.heights().iter().position(|&h| !on_level_grid(h, spec)) {
        return invalid(format!(
            "height {} at pixel {k} is not on the {}-level grid",
            map.heights()[k],
            spec.levels
        ));
    }
    if spec.error_bound == 0.0 {
        return Ok(map.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = spec.error_bound;
    map.map_in_aperture(|h| (h + rng.random_range(-b..=b)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::rot90_centered;
    use proptest::prelude::*;
    use rand::Rng;

    fn spec() -> DoeFabSpec {
        DoeFabSpec::default()
    }

    #[test]
    fn constant_profile_fills_aperture() {
        let p = RadialProfile::constant(1e-7, 4e-6).unwrap();
        let m = rotate_radial_profile(&p, 32, 4e-6, 40e-6).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let expect = if m.in_aperture(i, j) { 1e-7 } else { 0.0 };
                assert_eq!(m.height(i, j), expect);
            }
        }
        assert!(m.heights().contains(&0.0));
    }

    #[test]
    fn zero_profile_gives_zero_map() {
        let p = RadialProfile::constant(0.0, 4e-6).unwrap();
        let m = rotate_radial_profile(&p, 16, 4e-6, 32e-6).unwrap();
        assert!(m.heights().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn linear_profile_lookup() {
        let samples: Vec<f64> = (0..PROFILE_LEN).map(|k| k as f64 * 1e-9).collect();
        let p = RadialProfile::new(samples.clone(), 4e-6).unwrap();
        let m = rotate_radial_profile(&p, 256, 4e-6, 128.0 * 4e-6).unwrap();
        assert_eq!(m.height(128, 128 + 100), samples[100]);
        assert_eq!(m.height(128 - 100, 128), samples[100]);
    }

    #[test]
    fn profile_length_and_grid_errors() {
        assert!(RadialProfile::new(vec![0.0; 511], 4e-6).is_err());
        let p = RadialProfile::constant(0.0, 4e-6).unwrap();
        assert!(rotate_radial_profile(&p, 15, 4e-6, 10e-6).is_err());
        assert!(rotate_radial_profile(&p, 16, 0.0, 10e-6).is_err());
        assert!(rotate_radial_profile(&p, 16, 4e-6, 1.0).is_err());
    }

    #[test]
    fn profile_text_roundtrip_and_count_diagnostic() {
        let p = RadialProfile::new((0..512).map(|k| k as f64 * 3e-9).collect(), 4e-6).unwrap();
        let back = RadialProfile::from_text(&p.to_text(), 4e-6).unwrap();
        assert_eq!(back, p);
        let short: String = "0\n".repeat(511);
        let err = RadialProfile::from_text(&short, 4e-6)
            .unwrap_err()
            .to_string();
        assert!(err.contains("512"), "{err}");
    }

    #[test]
    fn quantize_examples() {
        let s = spec();
        let step = s.step();
        assert_eq!(s.level_of(0.0), 0);
        assert_eq!(s.level_of(s.total_depth), 0);
        assert_eq!(s.level_of(1.5 * step), 2);
        assert_eq!(s.level_of(1.49 * step), 1);
    }

    #[test]
    fn quantize_rejects_out_of_range() {
        let p = RadialProfile::constant(3e-6, 4e-6).unwrap();
        let m = rotate_radial_profile(&p, 16, 4e-6, 32e-6).unwrap();
        assert!(quantize_height(&m, &spec()).is_err());
    }

    #[test]
    fn fabrication_error_zero_bound_is_identity() {
        let s = DoeFabSpec {
            error_bound: 0.0,
            ..spec()
        };
        let p = RadialProfile::constant(s.step() * 3.0, 4e-6).unwrap();
        let m = rotate_radial_profile(&p, 16, 4e-6, 32e-6).unwrap();
        let q = quantize_height(&m, &s).unwrap();
        assert_eq!(apply_fabrication_error(&q, &s, 9).unwrap(), q);
    }

    #[test]
    fn fabrication_error_is_bounded_and_seeded() {
        let s = spec();
        let samples = (0..PROFILE_LEN)
            .map(|k| (k % 16) as f64 * s.step())
            .collect();
        let p = RadialProfile::new(samples, 4e-6).unwrap();
        let m = quantize_height(&rotate_radial_profile(&p, 64, 4e-6, 128e-6).unwrap(), &s).unwrap();
        let a = apply_fabrication_error(&m, &s, 7).unwrap();
        let b = apply_fabrication_error(&m, &s, 7).unwrap();
        let c = apply_fabrication_error(&m, &s, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (k, (x, y)) in a.heights().iter().zip(m.heights()).enumerate() {
            assert!((x - y).abs() <= 40e-9 + 1e-18);
            assert!(*x >= 0.0);
            let (i, j) = (k / 64, k % 64);
            if !m.in_aperture(i, j) {
                assert_eq!(*x, 0.0);
            }
        }
    }

    #[test]
    fn fabrication_error_requires_quantized_map() {
        let p = RadialProfile::constant(1.234e-7, 4e-6).unwrap();
        let m = rotate_radial_profile(&p, 16, 4e-6, 32e-6).unwrap();
        assert!(apply_fabrication_error(&m, &spec(), 1).is_err());
    }

    #[test]
    fn refractive_index_modes() {
        let c = MaterialModel::Constant {
            constant_index: 1.5,
        };
        assert_eq!(c.refractive_index(800e-9).unwrap(), 1.5);
        let fs = MaterialModel::SellmeierFusedSilica;
        let n1000 = fs.refractive_index(1000e-9).unwrap();
        assert!((n1000 - 1.4504).abs() < 1e-3, "{n1000}");
        assert!(fs.refractive_index(700e-9).unwrap() > n1000);
        assert!(fs.refractive_index(300e-9).is_err());
        assert!(fs.refractive_index(2100e-9).is_err());
    }

    #[test]
    fn default_depth_is_one_wave_at_1000nm() {
        let n = MaterialModel::SellmeierFusedSilica
            .refractive_index(1000e-9)
            .unwrap();
        assert!(((n - 1.0) * 2.2192e-6 - 1000e-9).abs() < 5e-9);
    }

    #[test]
    fn ndoe_roundtrip_and_magic() {
        let p = RadialProfile::constant(5e-7, 4e-6).unwrap();
        let m = rotate_radial_profile(&p, 8, 4e-6, 16e-6).unwrap();
        let bytes = m.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"NDOE");
        assert_eq!(bytes.len(), 4 + 4 + 8 + 8 + 64 * 4);
        let back = HeightMap::from_bytes(&bytes).unwrap();
        assert_eq!(back.size(), 8);
        for (a, b) in back.heights().iter().zip(m.heights()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            HeightMap::from_bytes(&bad),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            HeightMap::from_bytes(&bytes[..bytes.len() - 4]),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn fresnel_lens_profile_is_within_depth() {
        let p = RadialProfile::fresnel_lens(850e-9, 0.05, &MaterialModel::default(), 4e-6).unwrap();
        p.check_depth(spec().total_depth).unwrap();
        assert_eq!(p.samples()[0], 0.0);
    }

    proptest! {
        #[test]
        fn rotation_invariance(seed in 0u64..1000, n in prop::sample::select(vec![8usize, 10, 16, 32])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples = (0..PROFILE_LEN).map(|_| rng.random_range(0.0..2e-6)).collect();
            let p = RadialProfile::new(samples, 4e-6).unwrap();
            let m = rotate_radial_profile(&p, n, 4e-6, n as f64 * 2e-6).unwrap();
            let r1 = rot90_centered(m.heights(), n);
            prop_assert_eq!(&r1, &m.heights().to_vec());
        }

        #[test]
        fn quantize_idempotent_and_bounded(seed in 0u64..1000) {
            let s = spec();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples = (0..PROFILE_LEN).map(|_| rng.random_range(0.0..=s.total_depth)).collect();
            let p = RadialProfile::new(samples, 4e-6).unwrap();
            let m = rotate_radial_profile(&p, 32, 4e-6, 64e-6).unwrap();
            let q = quantize_height(&m, &s).unwrap();
            let qq = quantize_height(&q, &s).unwrap();
            prop_assert_eq!(&q, &qq);
            let limit = s.total_depth * (1.0 - 1.0 / (2.0 * s.levels as f64));
            for (h, hq) in m.heights().iter().zip(q.heights()) {
                prop_assert!(on_level_grid(*hq, &s));
                if *h < limit {
                    prop_assert!((h - hq).abs() <= s.step() / 2.0 + 1e-18);
                }
            }
        }
    }
}
