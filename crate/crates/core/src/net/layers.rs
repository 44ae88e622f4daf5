//! Building blocks of the spectral-attention U-Net.

use super::tensor::{conv2d, conv_transpose_2x2, gelu, ConvSpec, FeatureMap};
use super::weights::WeightSet;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-6;
const L2_NORM_EPS: f64 = 1e-12;

/// Normalizes each spatial position across channels, then applies gain and bias.
pub fn layer_norm(x: &FeatureMap, gain: &[f32], bias: &[f32]) -> Result<FeatureMap> {
    let (c, h, w) = x.shape();
    if gain.len() != c || bias.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "layer norm over {c} channels got gain {} / bias {}",
            gain.len(),
            bias.len()
        )));
    }
    let plane = h * w;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for n in 0..plane {
        let mean = (0..c).map(|k| src[k * plane + n]).sum::<f64>() / c as f64;
        let var = (0..c)
            .map(|k| {
                let d = src[k * plane + n] - mean;
                d * d
            })
            .sum::<f64>()
            / c as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for k in 0..c {
            out[k * plane + n] =
                (src[k * plane + n] - mean) * inv * gain[k] as f64 + bias[k] as f64;
        }
    }
    FeatureMap::new(c, h, w, out)
}

/// One head's `d_h × d_h` attention matrix, row-major; each column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub size: usize,
    pub data: Vec<f64>,
}

impl AttentionMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.size)
            .map(|j| (0..self.size).map(|i| self.get(i, j)).sum())
            .collect()
    }
}

/// `y[o, n] = Σ_i W[o, i] x[i, n]` with `W` stored `[out, in]`.
fn project(x: &FeatureMap, weight: &[f32], out_channels: usize) -> Result<FeatureMap> {
    let spec = ConvSpec::same(x.channels(), out_channels, 1);
    conv2d(x, &spec, weight, None)
}

fn l2_normalize_rows(m: &mut [f64], plane: usize) {
    for row in m.chunks_exact_mut(plane) {
        let norm = row
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(L2_NORM_EPS);
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Spectral-wise multi-head self-attention: channels are the tokens.
pub fn spectral_msa(
    x: &FeatureMap,
    ws: &WeightSet,
    prefix: &str,
    heads: usize,
) -> Result<FeatureMap> {
    Ok(spectral_msa_with_attention(x, ws, prefix, heads)?.0)
}

/// As [`spectral_msa`], also returning every head's attention matrix.
///
/// Per head, with `Q`, `K`, `V` as `HW × d_h` matrices whose columns are
/// L2-normalized (Q, K) along `HW`:
///
/// ```text
/// A   = softmax_columns(σ_h · Kᵀ Q)
/// out = V · A
/// ```
///
/// The merged heads go through a 1×1 projection (with bias), and a positional
/// branch `dw3×3 → GELU → dw3×3` applied to `V` is added.
pub fn spectral_msa_with_attention(
    x: &FeatureMap,
    ws: &WeightSet,
    prefix: &str,
    heads: usize,
) -> Result<(FeatureMap, Vec<AttentionMap>)> {
    let (d, h, w) = x.shape();
    if heads == 0 || d % heads != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{d} channels are not divisible into {heads} heads"
        )));
    }
    let temperature = ws.data(&format!("{prefix}.temperature"))?;
    if temperature.len() != heads {
        return Err(Error::ShapeMismatch(format!(
            "{prefix}.temperature has {} entries for {heads} heads",
            temperature.len()
        )));
    }
    let plane = h * w;
    let dh = d / heads;
    let mut q = project(x, ws.data(&format!("{prefix}.q_proj"))?, d)?.into_data();
    let mut k = project(x, ws.data(&format!("{prefix}.k_proj"))?, d)?.into_data();
    let v = project(x, ws.data(&format!("{prefix}.v_proj"))?, d)?;
    l2_normalize_rows(&mut q, plane);
    l2_normalize_rows(&mut k, plane);

    let vd = v.data();
    let mut merged = vec![0.0; d * plane];
    let mut maps = Vec::with_capacity(heads);
    for (hd, &sigma) in temperature.iter().enumerate() {
        let base = hd * dh;
        let sigma = sigma as f64;
        let mut a = vec![0.0; dh * dh];
        for i in 0..dh {
            let ki = &k[(base + i) * plane..(base + i + 1) * plane];
            for j in 0..dh {
                let qj = &q[(base + j) * plane..(base + j + 1) * plane];
                a[i * dh + j] = sigma * ki.iter().zip(qj).map(|(p, r)| p * r).sum::<f64>();
            }
        }
        for j in 0..dh {
            let max = (0..dh)
                .map(|i| a[i * dh + j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..dh {
                let e = (a[i * dh + j] - max).exp();
                a[i * dh + j] = e;
                total += e;
            }
            for i in 0..dh {
                a[i * dh + j] /= total;
            }
        }
        for j in 0..dh {
            let dst = &mut merged[(base + j) * plane..(base + j + 1) * plane];
            for i in 0..dh {
                let weight = a[i * dh + j];
                let vi = &vd[(base + i) * plane..(base + i + 1) * plane];
                for (o, val) in dst.iter_mut().zip(vi) {
                    *o += weight * val;
                }
            }
        }
        maps.push(AttentionMap { size: dh, data: a });
    }
    let merged = FeatureMap::new(d, h, w, merged)?;
    let projected = conv2d(
        &merged,
        &ConvSpec::same(d, d, 1),
        ws.data(&format!("{prefix}.out_proj"))?,
        Some(ws.data(&format!("{prefix}.out_proj.bias"))?),
    )?;
    let dw = ConvSpec::depthwise(d, 3);
    let pos = conv2d(&v, &dw, ws.data(&format!("{prefix}.pos_conv1"))?, None)?.map(gelu);
    let pos = conv2d(&pos, &dw, ws.data(&format!("{prefix}.pos_conv2"))?, None)?;
    Ok((projected.add(&pos)?, maps))
}

/// `1×1 expand → GELU → depthwise 3×3 → GELU → 1×1 contract`, all bias-free.
pub fn feed_forward(x: &FeatureMap, ws: &WeightSet, prefix: &str) -> Result<FeatureMap> {
    let d = x.channels();
    let expand = ws.get(&format!("{prefix}.expand"))?;
    let hidden = expand.shape.first().copied().unwrap_or(0);
    let y = conv2d(x, &ConvSpec::same(d, hidden, 1), &expand.data, None)?.map(gelu);
    let y = conv2d(
        &y,
        &ConvSpec::depthwise(hidden, 3),
        ws.data(&format!("{prefix}.dwconv"))?,
        None,
    )?
    .map(gelu);
    conv2d(
        &y,
        &ConvSpec::same(hidden, d, 1),
        ws.data(&format!("{prefix}.contract"))?,
        None,
    )
}

/// `x₁ = x + MSA(LN₁(x))`, `out = x₁ + FFN(LN₂(x₁))`.
pub fn nir_sa_block(
    x: &FeatureMap,
    ws: &WeightSet,
    prefix: &str,
    heads: usize,
) -> Result<FeatureMap> {
    let n1 = layer_norm(
        x,
        ws.data(&format!("{prefix}.ln1.gain"))?,
        ws.data(&format!("{prefix}.ln1.bias"))?,
    )?;
    let x1 = x.add(&spectral_msa(&n1, ws, &format!("{prefix}.msa"), heads)?)?;
    let n2 = layer_norm(
        &x1,
        ws.data(&format!("{prefix}.ln2.gain"))?,
        ws.data(&format!("{prefix}.ln2.bias"))?,
    )?;
    x1.add(&feed_forward(&n2, ws, &format!("{prefix}.ffn"))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    /// 4×4 convolution, stride 2, padding 1, `C → 2C`, no bias.
    Down,
    /// 2×2 transposed convolution, stride 2, `C → C/2`, with bias.
    Up,
}

pub fn resample_features(
    x: &FeatureMap,
    direction: Resample,
    ws: &WeightSet,
    name: &str,
) -> Result<FeatureMap> {
    let (c, h, w) = x.shape();
    match direction {
        Resample::Down => {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "downsampling needs even dims, got {h}x{w}"
                )));
            }
            let spec = ConvSpec {
                in_channels: c,
                out_channels: 2 * c,
                kernel: 4,
                stride: 2,
                padding: 1,
                groups: 1,
            };
            conv2d(x, &spec, ws.data(name)?, None)
        }
        Resample::Up => {
            if c % 2 != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "upsampling needs an even channel count, got {c}"
                )));
            }
            conv_transpose_2x2(
                x,
                c / 2,
                ws.data(name)?,
                Some(ws.data(&format!("{name}.bias"))?),
            )
        }
    }
}

/// Three-stage merge of encoder (`shallow`) and decoder (`deep`) features:
///
/// ```text
/// M   = conv(cat(shallow, deep)) + conv(shallow)
/// out = conv(cat(conv(deep), M))
/// ```
pub fn nir_fusion(
    shallow: &FeatureMap,
    deep: &FeatureMap,
    ws: &WeightSet,
    prefix: &str,
) -> Result<FeatureMap> {
    if shallow.shape() != deep.shape() {
        return Err(Error::ShapeMismatch(format!(
            "fusion inputs differ: shallow {:?}, deep {:?}",
            shallow.shape(),
            deep.shape()
        )));
    }
    let d = shallow.channels();
    let conv = |x: &FeatureMap, name: &str, cin: usize| -> Result<FeatureMap> {
        conv2d(
            x,
            &ConvSpec::same(cin, d, 3),
            ws.data(&format!("{prefix}.{name}"))?,
            Some(ws.data(&format!("{prefix}.{name}.bias"))?),
        )
    };
    let joint = conv(&shallow.concat(deep)?, "cat_conv", 2 * d)?;
    let intermediate = joint.add(&conv(shallow, "shallow_conv", d)?)?;
    let deep_path = conv(deep, "deep_conv", d)?;
    conv(&deep_path.concat(&intermediate)?, "out_conv", 2 * d)
}
