//! The single JSON document that drives every CLI stage.
//!
//! All sections are optional and fall back to their defaults; unknown keys
//! anywhere are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doe::{DoeFabSpec, MaterialModel, DEFAULT_APERTURE_RADIUS, DEFAULT_PIXEL_PITCH};
use crate::encoder::SensorModel;
use crate::error::{invalid, Error, Result};
use crate::net::NetConfig;
use crate::propagation::OpticalConfig;
use crate::recon::ReconConfig;

/// Offsets added to the global seed so each stochastic stage draws an
/// independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Fabrication = 1,
    Noise = 2,
    Weights = 3,
}

/// Layout of the DOE on the simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoeLayout {
    pub aperture_radius: f64,
    /// Radial distance between consecutive profile samples.
    pub profile_sample_pitch: f64,
    /// Design wavelength of the default diffractive-lens profile.
    pub design_wavelength: f64,
}

impl Default for DoeLayout {
    fn default() -> Self {
        DoeLayout {
            aperture_radius: DEFAULT_APERTURE_RADIUS,
            profile_sample_pitch: DEFAULT_PIXEL_PITCH,
            design_wavelength: 850e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub optics: OpticalConfig,
    pub doe: DoeLayout,
    pub fabrication: DoeFabSpec,
    pub material: MaterialModel,
    pub sensor: SensorModel,
    pub recon: ReconConfig,
    pub net: NetConfig,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        self.fabrication.validate()?;
        self.sensor.validate()?;
        self.recon.validate()?;
        self.net.validate()?;
        for wavelength in self.optics.spectral_grid()?.wavelengths() {
            self.material.refractive_index(wavelength)?;
        }
        let half_extent = self.optics.grid_size as f64 * self.optics.pixel_pitch / 2.0;
        let radius = self.doe.aperture_radius;
        if !(radius > 0.0 && radius <= half_extent) {
            return invalid(format!(
                "doe.aperture_radius {radius} must lie in (0, {half_extent}]"
            ));
        }
        if !(self.doe.profile_sample_pitch > 0.0 && self.doe.profile_sample_pitch.is_finite()) {
            return invalid(format!(
                "doe.profile_sample_pitch must be positive, got {}",
                self.doe.profile_sample_pitch
            ));
        }
        self.material.refractive_index(self.doe.design_wavelength)?;
        Ok(())
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        self.seed.wrapping_add(stage as u64)
    }
}
