//! Hyperspectral datacubes: storage, the NCUB format, synthetic scenes and
//! per-band PNG export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{self, ByteReader, ByteWriter};
use crate::error::{invalid, Error, Result};
use crate::spectral::SpectralGrid;

const NCUB_MAGIC: &[u8; 4] = b"NCUB";

/// An `H × W × B` datacube stored band-sequentially (all of band 0, then band 1, …).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    grid: SpectralGrid,
    data: Vec<f64>,
}

impl HyperCube {
    pub fn new(height: usize, width: usize, grid: SpectralGrid, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid(format!(
                "cube dimensions must be positive, got {height}x{width}"
            ));
        }
        if data.len() != height * width * grid.bands() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{} cube",
                data.len(),
                grid.bands()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("datacube".into()));
        }
        Ok(HyperCube {
            height,
            width,
            grid,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, grid: SpectralGrid) -> Result<Self> {
        Self::new(
            height,
            width,
            grid,
            vec![0.0; height * width * grid.bands()],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.grid.bands()
    }

    pub fn grid(&self) -> SpectralGrid {
        self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.data[(band * self.height + row) * self.width + col]
    }

    /// Same shape and grid with new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        HyperCube::new(self.height, self.width, self.grid, data)
    }

    pub fn same_shape(&self, other: &HyperCube) -> bool {
        self.height == other.height && self.width == other.width && self.bands() == other.bands()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new(NCUB_MAGIC);
        w.u32(binio::u32_dim(self.height, "height")?);
        w.u32(binio::u32_dim(self.width, "width")?);
        w.u32(binio::u32_dim(self.bands(), "bands")?);
        w.f64(self.grid.start());
        w.f64(self.grid.step());
        for &v in &self.data {
            w.f32(v as f32);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "NCUB");
        r.expect_magic(NCUB_MAGIC)?;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let b = r.u32()? as usize;
        let l0 = r.f64()?;
        let dl = r.f64()?;
        let grid = SpectralGrid::new(l0, dl, b)?;
        let count = h
            .checked_mul(w)
            .and_then(|x| x.checked_mul(b))
            .ok_or_else(|| Error::Invalid("NCUB dimensions overflow".into()))?;
        let data = r.f32_payload(count)?;
        HyperCube::new(h, w, grid, data.into_iter().map(f64::from).collect())
    }
}

pub fn save_cube(cube: &HyperCube, path: &Path) -> Result<()> {
    binio::write_atomic(path, &cube.to_bytes()?)
}

pub fn load_cube(path: &Path) -> Result<HyperCube> {
    HyperCube::from_bytes(&binio::read_file(path)?)
}

/// Pixel rectangle; `x` is the column and `y` the row of the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Reflectance as a function of wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Spectrum {
    Constant {
        value: f64,
    },
    /// `peak · exp(−(λ − center)² / (2 width²))`.
    Gaussian {
        center: f64,
        width: f64,
        peak: f64,
    },
    /// Linear from `start` at the first band to `end` at the last.
    Ramp {
        start: f64,
        end: f64,
    },
}

impl Spectrum {
    fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        match *self {
            Spectrum::Constant { value } if !in_unit(value) => {
                invalid(format!("constant spectrum value {value} outside [0, 1]"))
            }
            Spectrum::Gaussian { width, peak, center } if !(width > 0.0) || !in_unit(peak) || !center.is_finite() => {
                invalid(format!("gaussian spectrum needs width > 0 and peak in [0, 1], got width {width}, peak {peak}"))
            }
            Spectrum::Ramp { start, end } if !in_unit(start) || !in_unit(end) => {
                invalid(format!("ramp endpoints {start}, {end} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, wavelength: f64, grid: &SpectralGrid) -> f64 {
        match *self {
            Spectrum::Constant { value } => value,
            Spectrum::Gaussian {
                center,
                width,
                peak,
            } => {
                let d = (wavelength - center) / width;
                peak * (-0.5 * d * d).exp()
            }
            Spectrum::Ramp { start, end } => {
                if grid.bands() == 1 {
                    return start;
                }
                let first = grid.start();
                let last = grid.wavelength(grid.bands() - 1);
                let t = ((wavelength - first) / (last - first)).clamp(0.0, 1.0);
                start + (end - start) * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patch {
    pub rect: Rect,
    pub spectrum: Spectrum,
}

/// A synthetic scene: rectangular patches over a uniform background.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub background: f64,
    #[serde(default)]
    pub patches: Vec<Patch>,
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("scene spec: {e}")))
    }

    /// Two patches with clearly different NIR signatures, one falling off above
    /// 900 nm and one nearly flat, on a dim background.
    pub fn two_materials(height: usize, width: usize) -> Self {
        let (h2, w2) = (height / 2, width / 2);
        SceneSpec {
            background: 0.1,
            patches: vec![
                Patch {
                    rect: Rect {
                        x: 0,
                        y: 0,
                        w: w2.max(1),
                        h: height,
                    },
                    spectrum: Spectrum::Gaussian {
                        center: 780e-9,
                        width: 90e-9,
                        peak: 0.9,
                    },
                },
                Patch {
                    rect: Rect {
                        x: w2,
                        y: h2 / 2,
                        w: width - w2,
                        h: h2.max(1),
                    },
                    spectrum: Spectrum::Ramp {
                        start: 0.55,
                        end: 0.7,
                    },
                },
            ],
        }
    }
}

pub fn synth_scene(
    spec: &SceneSpec,
    height: usize,
    width: usize,
    grid: SpectralGrid,
) -> Result<HyperCube> {
    if !(0.0..=1.0).contains(&spec.background) {
        return invalid(format!("background {} outside [0, 1]", spec.background));
    }
    for (k, p) in spec.patches.iter().enumerate() {
        let r = p.rect;
        if r.w == 0 || r.h == 0 || r.x + r.w > width || r.y + r.h > height {
            return invalid(format!(
                "patch {k} rect {}x{} at ({}, {}) exceeds the {height}x{width} frame",
                r.w, r.h, r.x, r.y
            ));
        }
        p.spectrum.validate()?;
    }
    let plane = height * width;
    let mut data = vec![spec.background; plane * grid.bands()];
    for (b, lambda) in grid.wavelengths().into_iter().enumerate() {
        let band = &mut data[b * plane..(b + 1) * plane];
        for p in &spec.patches {
            let v = p.spectrum.evaluate(lambda, &grid);
            for row in p.rect.y..p.rect.y + p.rect.h {
                band[row * width + p.rect.x..row * width + p.rect.x + p.rect.w].fill(v);
            }
        }
    }
    HyperCube::new(height, width, grid, data)
}

/// Min-max maps a plane to 16-bit levels; a constant plane maps to 32768.
pub fn to_u16_levels(values: &[f64]) -> Vec<u16> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return vec![32768; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 65535.0).round() as u16)
        .collect()
}

/// Encodes a plane as a 16-bit grayscale PNG.
pub fn png16_bytes(values: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    let levels = to_u16_levels(values);
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(
            &mut out,
            binio::u32_dim(width, "width")?,
            binio::u32_dim(height, "height")?,
        );
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let raw: Vec<u8> = levels.iter().flat_map(|v| v.to_be_bytes()).collect();
        writer
            .write_image_data(&raw)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(out)
}

pub fn export_band(cube: &HyperCube, band_index: usize, path: &Path) -> Result<()> {
    if band_index >= cube.bands() {
        return invalid(format!(
            "band index {band_index} out of range for a {}-band cube",
            cube.bands()
        ));
    }
    let bytes = png16_bytes(cube.band(band_index), cube.height(), cube.width())?;
    binio::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full(h: usize, w: usize, spectrum: Spectrum) -> SceneSpec {
        SceneSpec {
            background: 0.0,
            patches: vec![Patch {
                rect: Rect { x: 0, y: 0, w, h },
                spectrum,
            }],
        }
    }

    #[test]
    fn ncub_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..8 * 8 * 31)
            .map(|_| rng.random::<f32>() as f64)
            .collect();
        let cube = HyperCube::new(8, 8, SpectralGrid::nir_default(), data).unwrap();
        let back = HyperCube::from_bytes(&cube.to_bytes().unwrap()).unwrap();
        assert_eq!(back, cube);
    }

    #[test]
    fn ncub_errors_are_distinct() {
        let cube = HyperCube::zeros(2, 3, SpectralGrid::nir_default()).unwrap();
        let bytes = cube.to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'?';
        assert!(matches!(
            HyperCube::from_bytes(&bad),
            Err(Error::BadMagic { .. })
        ));
        // 31 bands declared, payload for 30.
        let short = &bytes[..bytes.len() - 2 * 3 * 4];
        assert!(matches!(
            HyperCube::from_bytes(short),
            Err(Error::SizeMismatch {
                expected: 186,
                actual: 180
            })
        ));
        assert!(matches!(
            HyperCube::from_bytes(&bytes[..10]),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn constant_scene() {
        let c = synth_scene(
            &full(4, 5, Spectrum::Constant { value: 0.5 }),
            4,
            5,
            SpectralGrid::nir_default(),
        )
        .unwrap();
        assert!(c.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gaussian_scene_values() {
        let spec = full(
            2,
            2,
            Spectrum::Gaussian {
                center: 850e-9,
                width: 50e-9,
                peak: 1.0,
            },
        );
        let g = SpectralGrid::nir_default();
        let c = synth_scene(&spec, 2, 2, g).unwrap();
        assert!((c.get(g.band_of(850e-9).unwrap(), 0, 0) - 1.0).abs() < 1e-12);
        let side = (-0.5f64).exp();
        assert!((c.get(g.band_of(800e-9).unwrap(), 1, 1) - side).abs() < 1e-9);
        assert!((c.get(g.band_of(900e-9).unwrap(), 1, 0) - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn ramp_scene_values() {
        let g = SpectralGrid::nir_default();
        let c = synth_scene(
            &full(
                1,
                1,
                Spectrum::Ramp {
                    start: 0.0,
                    end: 1.0,
                },
            ),
            1,
            1,
            g,
        )
        .unwrap();
        assert_eq!(c.get(0, 0, 0), 0.0);
        assert!((c.get(30, 0, 0) - 1.0).abs() < 1e-12);
        assert!((c.get(15, 0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn later_patches_overwrite_and_bounds_checked() {
        let g = SpectralGrid::new(700e-9, 10e-9, 2).unwrap();
        let mut spec = full(4, 4, Spectrum::Constant { value: 0.2 });
        spec.background = 0.9;
        spec.patches.push(Patch {
            rect: Rect {
                x: 1,
                y: 2,
                w: 2,
                h: 1,
            },
            spectrum: Spectrum::Constant { value: 0.7 },
        });
        let c = synth_scene(&spec, 4, 4, g).unwrap();
        assert_eq!(c.get(1, 2, 1), 0.7);
        assert_eq!(c.get(1, 0, 0), 0.2);
        spec.patches[1].rect.x = 3;
        assert!(synth_scene(&spec, 4, 4, g).is_err());
    }

    #[test]
    fn scene_json_rejects_unknown_fields() {
        let ok = r#"{"background":0.1,"patches":[{"rect":{"x":0,"y":0,"w":2,"h":2},"spectrum":{"kind":"constant","value":0.5}}]}"#;
        assert_eq!(SceneSpec::from_json(ok).unwrap().patches.len(), 1);
        assert!(SceneSpec::from_json(r#"{"background":0.1,"colour":3}"#).is_err());
    }

    #[test]
    fn png_levels() {
        assert_eq!(to_u16_levels(&[0.0, 1.0, 0.5]), vec![0, 65535, 32768]);
        assert_eq!(to_u16_levels(&[0.3, 0.3]), vec![32768, 32768]);
    }

    #[test]
    fn export_band_bounds_and_decode() {
        let dir = tempfile::tempdir().unwrap();
        let g = SpectralGrid::new(700e-9, 10e-9, 2).unwrap();
        let cube = HyperCube::new(1, 2, g, vec![0.0, 1.0, 0.4, 0.4]).unwrap();
        let path = dir.path().join("b0.png");
        export_band(&cube, 0, &path).unwrap();
        let decoder =
            png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&path).unwrap()));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!(info.bit_depth, png::BitDepth::Sixteen);
        assert_eq!(&buf[..4], &[0, 0, 255, 255]);
        assert!(export_band(&cube, 2, &dir.path().join("x.png")).is_err());
    }

    proptest! {
        #[test]
        fn synth_within_unit_range(bg in 0.0f64..=1.0, v in 0.0f64..=1.0, c in 650e-9f64..1050e-9, s in 1e-9f64..200e-9) {
            let g = SpectralGrid::nir_default();
            let spec = SceneSpec {
                background: bg,
                patches: vec![
                    Patch { rect: Rect { x: 0, y: 0, w: 3, h: 2 }, spectrum: Spectrum::Gaussian { center: c, width: s, peak: v } },
                    Patch { rect: Rect { x: 2, y: 1, w: 2, h: 3 }, spectrum: Spectrum::Ramp { start: v, end: bg } },
                ],
            };
            let a = synth_scene(&spec, 4, 4, g).unwrap();
            prop_assert!(a.data().iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert_eq!(a, synth_scene(&spec, 4, 4, g).unwrap());
        }
    }
}
