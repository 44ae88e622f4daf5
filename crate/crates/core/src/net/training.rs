use crate::cube::HyperCube;
use crate::error::{invalid, Error, Result};

pub const TRAINING_EPOCHS: u32 = 150;
const BASE_LR: f64 = 0.0005;
const DECAY: f64 = 0.9;
const DECAY_EVERY: u32 = 30;

/// Mean absolute error over all voxels.
pub fn l1_loss(pred: &HyperCube, truth: &HyperCube) -> Result<f64> {
    if !pred.same_shape(truth) {
        return Err(Error::ShapeMismatch(format!(
            "l1 loss on {}x{}x{} vs {}x{}x{}",
            pred.height(),
            pred.width(),
            pred.bands(),
            truth.height(),
            truth.width(),
            truth.bands()
        )));
    }
    let n = pred.data().len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n)
}

/// Step decay: `0.0005 · 0.9^⌊epoch/30⌋` for `epoch < 150`.
pub fn lr_schedule(epoch: u32) -> Result<f64> {
    if epoch >= TRAINING_EPOCHS {
        return invalid(format!(
            "epoch {epoch} is outside the {TRAINING_EPOCHS}-epoch schedule"
        ));
    }
    Ok(BASE_LR * DECAY.powi((epoch / DECAY_EVERY) as i32))
}
