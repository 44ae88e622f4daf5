use super::layers::{nir_fusion, nir_sa_block, resample_features, Resample};
use super::tensor::{conv2d, ConvSpec, FeatureMap};
use super::weights::WeightSet;
use super::NetConfig;
use crate::cube::HyperCube;
use crate::encoder::EncodedImage;
use crate::error::{Error, Result};

/// Shape of one named intermediate, recorded by [`nirsa_forward_traced`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageShape {
    pub stage: &'static str,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

struct Trace(Vec<StageShape>);

impl Trace {
    fn record(&mut self, stage: &'static str, x: &FeatureMap) {
        let (channels, height, width) = x.shape();
        self.0.push(StageShape {
            stage,
            channels,
            height,
            width,
        });
    }
}

fn stage(
    x: FeatureMap,
    ws: &WeightSet,
    name: &str,
    blocks: usize,
    heads: usize,
) -> Result<FeatureMap> {
    (0..blocks).try_fold(x, |x, i| {
        nir_sa_block(&x, ws, &format!("{name}.block{i}"), heads)
    })
}

fn conv(
    x: &FeatureMap,
    ws: &WeightSet,
    name: &str,
    out: usize,
    kernel: usize,
    bias: bool,
) -> Result<FeatureMap> {
    let b = if bias {
        Some(ws.data(&format!("{name}.bias"))?)
    } else {
        None
    };
    conv2d(
        x,
        &ConvSpec::same(x.channels(), out, kernel),
        ws.data(name)?,
        b,
    )
}

/// Reconstructs an `H×W×out_bands` cube from one encoded image.
pub fn nirsa_forward(
    image: &EncodedImage,
    ws: &WeightSet,
    config: &NetConfig,
) -> Result<HyperCube> {
    Ok(nirsa_forward_traced(image, ws, config)?.0)
}

/// As [`nirsa_forward`], also returning every intermediate shape in execution order.
pub fn nirsa_forward_traced(
    image: &EncodedImage,
    ws: &WeightSet,
    config: &NetConfig,
) -> Result<(HyperCube, Vec<StageShape>)> {
    config.validate()?;
    let (h, w) = (image.height(), image.width());
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "network input must have sides divisible by 4, got {h}x{w}"
        )));
    }
    ws.validate(config)?;
    let c = config.base_channels;
    let [n1, n2, n3] = config.block_counts;
    let [h1, h2, h3] = config.heads_per_level;
    let mut trace = Trace(Vec::new());

    let input = FeatureMap::new(1, h, w, image.data().to_vec())?;
    let o1 = conv(&input, ws, "conv_in", c, 1, true)?;
    trace.record("conv_in", &o1);
    let x = conv(&o1, ws, "embedding", c, 3, false)?;
    trace.record("embedding", &x);
    let o2 = stage(x, ws, "enc1", n1, h1)?;
    trace.record("enc1", &o2);
    let x = resample_features(&o2, Resample::Down, ws, "down1")?;
    trace.record("down1", &x);
    let o3 = stage(x, ws, "enc2", n2, h2)?;
    trace.record("enc2", &o3);
    let x = resample_features(&o3, Resample::Down, ws, "down2")?;
    trace.record("down2", &x);
    let x = stage(x, ws, "bottleneck", n3, h3)?;
    trace.record("bottleneck", &x);
    let o4 = resample_features(&x, Resample::Up, ws, "up2")?;
    trace.record("up2", &o4);
    let x = nir_fusion(&o3, &o4, ws, "fusion2")?;
    trace.record("fusion2", &x);
    let x = stage(x, ws, "dec2", n2, h2)?;
    trace.record("dec2", &x);
    let o5 = resample_features(&x, Resample::Up, ws, "up1")?;
    trace.record("up1", &o5);
    let x = nir_fusion(&o2, &o5, ws, "fusion1")?;
    trace.record("fusion1", &x);
    let x = stage(x, ws, "dec1", n1, h1)?;
    trace.record("dec1", &x);
    let o6 = conv(&x, ws, "mapping", c, 3, false)?;
    trace.record("mapping", &o6);
    let x = o6.add(&o1)?;
    let out = conv(&x, ws, "conv_out", config.out_bands, 1, true)?.map(|v| v.max(0.0));
    trace.record("conv_out", &out);
    if !out.is_finite() {
        return Err(Error::NonFinite("network output".into()));
    }
    let cube = HyperCube::new(h, w, config.output_grid()?, out.into_data())?;
    Ok((cube, trace.0))
}
