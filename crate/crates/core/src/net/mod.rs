//! Forward-pass reference of the U-shaped spectral-attention network.
//!
//! Tensors are channel-major `C×H×W`. Training is out of scope; only the loss
//! and learning-rate schedule exist, as pure functions.

mod layers;
mod model;
mod tensor;
mod training;
mod weights;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::spectral::SpectralGrid;

pub use layers::{
    feed_forward, layer_norm, nir_fusion, nir_sa_block, resample_features, spectral_msa,
    spectral_msa_with_attention, AttentionMap, Resample, LAYER_NORM_EPS,
};
pub use model::{nirsa_forward, nirsa_forward_traced, StageShape};
pub use tensor::{conv2d, conv_transpose_2x2, gelu, ConvSpec, FeatureMap};
pub use training::{l1_loss, lr_schedule, TRAINING_EPOCHS};
pub use weights::{
    init_weights, layer_specs, load_weights, save_weights, Init, LayerSpec, Tensor, WeightSet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub base_channels: usize,
    /// Blocks at full, half and quarter resolution.
    pub block_counts: [usize; 3],
    pub out_bands: usize,
    pub heads_per_level: [usize; 3],
    pub ffn_expansion: usize,
    /// First output band center, meters.
    pub band_start: f64,
    pub band_step: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_channels: 32,
            block_counts: [2, 2, 2],
            out_bands: 31,
            heads_per_level: [1, 2, 4],
            ffn_expansion: 4,
            band_start: 700e-9,
            band_step: 10e-9,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.base_channels;
        if c == 0 {
            return invalid("base_channels must be positive");
        }
        if self.block_counts.contains(&0) {
            return invalid(format!(
                "every block count must be at least 1, got {:?}",
                self.block_counts
            ));
        }
        for &h in &self.heads_per_level {
            if h == 0 || !c.is_multiple_of(h) {
                return invalid(format!(
                    "base_channels {c} is not divisible by head count {h}"
                ));
            }
        }
        if self.ffn_expansion == 0 {
            return invalid("ffn_expansion must be positive");
        }
        if self.out_bands == 0 {
            return invalid("out_bands must be positive");
        }
        self.output_grid()?;
        Ok(())
    }

    /// Channel width at level 0, 1, 2.
    pub fn level_width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn output_grid(&self) -> Result<SpectralGrid> {
        SpectralGrid::new(self.band_start, self.band_step, self.out_bands)
    }
}
