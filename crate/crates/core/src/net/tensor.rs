//! Channel-major feature maps and the convolution primitives the network uses.

use crate::error::{Error, Result};

/// `C × H × W` activations stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} feature map",
                data.len()
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(C, H, W)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(FeatureMap { data, ..*self })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Stacks `self` then `other` along the channel axis.
    pub fn concat(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::ShapeMismatch(format!(
                "cannot concatenate {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        FeatureMap::new(
            self.channels + other.channels,
            self.height,
            self.width,
            data,
        )
    }
}

/// Exact GELU, `x Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Hyper-parameters of a square 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        ConvSpec {
            groups: channels,
            ..ConvSpec::same(channels, channels, kernel)
        }
    }

    /// `[out, in/groups, k, k]`.
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel * self.kernel
    }

    pub fn output_size(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

/// Cross-correlation with zero padding, PyTorch `Conv2d` semantics.
pub fn conv2d(
    x: &FeatureMap,
    spec: &ConvSpec,
    weight: &[f32],
    bias: Option<&[f32]>,
) -> Result<FeatureMap> {
    if x.channels != spec.in_channels
        || spec.groups == 0
        || !spec.in_channels.is_multiple_of(spec.groups)
        || !spec.out_channels.is_multiple_of(spec.groups)
    {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} input channels in {} groups, got {}",
            spec.in_channels, spec.groups, x.channels
        )));
    }
    let expect: usize = spec.weight_shape().iter().product();
    if weight.len() != expect || bias.is_some_and(|b| b.len() != spec.out_channels) {
        return Err(Error::ShapeMismatch("convolution weight size".into()));
    }
    let (oh, ow) = match (spec.output_size(x.height), spec.output_size(x.width)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::ShapeMismatch("input smaller than kernel".into())),
    };
    let k = spec.kernel;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let (h, w) = (x.height as isize, x.width as isize);
    let pad = spec.padding as isize;
    let mut out = vec![0.0; spec.out_channels * oh * ow];
    for oc in 0..spec.out_channels {
        let g = oc / cout_g;
        let dst = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        if let Some(b) = bias {
            dst.fill(b[oc] as f64);
        }
        for icg in 0..cin_g {
            let ic = g * cin_g + icg;
            let src = x.channel(ic);
            for kr in 0..k {
                for kc in 0..k {
                    let wv = weight[((oc * cin_g + icg) * k + kr) * k + kc] as f64;
                    if wv == 0.0 {
                        continue;
                    }
                    for r in 0..oh {
                        let ir = (r * spec.stride) as isize + kr as isize - pad;
                        if ir < 0 || ir >= h {
                            continue;
                        }
                        let row = &src[ir as usize * x.width..(ir as usize + 1) * x.width];
                        let drow = &mut dst[r * ow..(r + 1) * ow];
                        for (c, d) in drow.iter_mut().enumerate() {
                            let icol = (c * spec.stride) as isize + kc as isize - pad;
                            if icol >= 0 && icol < w {
                                *d += wv * row[icol as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    FeatureMap::new(spec.out_channels, oh, ow, out)
}

/// Transposed convolution with kernel 2 and stride 2; weight `[in, out, 2, 2]`.
pub fn conv_transpose_2x2(
    x: &FeatureMap,
    out_channels: usize,
    weight: &[f32],
    bias: Option<&[f32]>,
) -> Result<FeatureMap> {
    if weight.len() != x.channels * out_channels * 4
        || bias.is_some_and(|b| b.len() != out_channels)
    {
        return Err(Error::ShapeMismatch(
            "transposed convolution weight size".into(),
        ));
    }
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; out_channels * oh * ow];
    for o in 0..out_channels {
        let dst = &mut out[o * oh * ow..(o + 1) * oh * ow];
        if let Some(b) = bias {
            dst.fill(b[o] as f64);
        }
        for c in 0..x.channels {
            let src = x.channel(c);
            for a in 0..2 {
                for b in 0..2 {
                    let wv = weight[((c * out_channels + o) * 2 + a) * 2 + b] as f64;
                    if wv == 0.0 {
                        continue;
                    }
                    for r in 0..h {
                        for col in 0..w {
                            dst[(2 * r + a) * ow + 2 * col + b] += wv * src[r * w + col];
                        }
                    }
                }
            }
        }
    }
    FeatureMap::new(out_channels, oh, ow, out)
}
