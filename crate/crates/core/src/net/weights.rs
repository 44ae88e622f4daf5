//! Named parameter tensors, the canonical layer table, deterministic
//! initialization and the NSAW file format.
//!
//! Canonical paths (`d` is the level width, `m` the FFN expansion, `h` the
//! head count at that level):
//!
//! | path | shape |
//! |------|-------|
//! | `conv_in`, `conv_in.bias` | `[C,1,1,1]`, `[C]` |
//! | `embedding` | `[C,C,3,3]` |
//! | `<stage>.block<i>.ln1.gain`, `.ln1.bias`, `.ln2.gain`, `.ln2.bias` | `[d]` |
//! | `<stage>.block<i>.msa.q_proj`, `.k_proj`, `.v_proj` | `[d,d]` |
//! | `<stage>.block<i>.msa.temperature` | `[h]` |
//! | `<stage>.block<i>.msa.out_proj`, `.out_proj.bias` | `[d,d]`, `[d]` |
//! | `<stage>.block<i>.msa.pos_conv1`, `.pos_conv2` | `[d,1,3,3]` |
//! | `<stage>.block<i>.ffn.expand` | `[d·m,d,1,1]` |
//! | `<stage>.block<i>.ffn.dwconv` | `[d·m,1,3,3]` |
//! | `<stage>.block<i>.ffn.contract` | `[d,d·m,1,1]` |
//! | `down1`, `down2` | `[2d,d,4,4]` |
//! | `up2`, `up1` (+ `.bias`) | `[d,d/2,2,2]`, `[d/2]` |
//! | `fusion<k>.cat_conv`, `.out_conv` (+ `.bias`) | `[d,2d,3,3]`, `[d]` |
//! | `fusion<k>.shallow_conv`, `.deep_conv` (+ `.bias`) | `[d,d,3,3]`, `[d]` |
//! | `mapping` | `[C,C,3,3]` |
//! | `conv_out`, `conv_out.bias` | `[B,C,1,1]`, `[B]` |
//!
//! Stages are `enc1` (C), `enc2` (2C), `bottleneck` (4C), `dec2` (2C) and
//! `dec1` (C); fusions are `fusion2` (2C) and `fusion1` (C).

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NetConfig;
use crate::binio::{self, ByteReader, ByteWriter};
use crate::error::{Error, Result};

const NSAW_MAGIC: &[u8; 4] = b"NSAW";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for tensor shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(−1/√fan_in, 1/√fan_in)`.
    FanIn(usize),
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn push(specs: &mut Vec<LayerSpec>, path: String, shape: Vec<usize>, init: Init) {
    specs.push(LayerSpec { path, shape, init });
}

fn block_specs(specs: &mut Vec<LayerSpec>, prefix: &str, d: usize, heads: usize, m: usize) {
    let p = |s: &str| format!("{prefix}.{s}");
    push(specs, p("ln1.gain"), vec![d], Init::Ones);
    push(specs, p("ln1.bias"), vec![d], Init::Zeros);
    for name in ["msa.q_proj", "msa.k_proj", "msa.v_proj"] {
        push(specs, p(name), vec![d, d], Init::FanIn(d));
    }
    push(specs, p("msa.temperature"), vec![heads], Init::Ones);
    push(specs, p("msa.out_proj"), vec![d, d], Init::FanIn(d));
    push(specs, p("msa.out_proj.bias"), vec![d], Init::FanIn(d));
    push(specs, p("msa.pos_conv1"), vec![d, 1, 3, 3], Init::FanIn(9));
    push(specs, p("msa.pos_conv2"), vec![d, 1, 3, 3], Init::FanIn(9));
    push(specs, p("ln2.gain"), vec![d], Init::Ones);
    push(specs, p("ln2.bias"), vec![d], Init::Zeros);
    push(specs, p("ffn.expand"), vec![d * m, d, 1, 1], Init::FanIn(d));
    push(specs, p("ffn.dwconv"), vec![d * m, 1, 3, 3], Init::FanIn(9));
    push(
        specs,
        p("ffn.contract"),
        vec![d, d * m, 1, 1],
        Init::FanIn(d * m),
    );
}

fn stage_specs(
    specs: &mut Vec<LayerSpec>,
    stage: &str,
    blocks: usize,
    d: usize,
    heads: usize,
    m: usize,
) {
    for i in 0..blocks {
        block_specs(specs, &format!("{stage}.block{i}"), d, heads, m);
    }
}

fn fusion_specs(specs: &mut Vec<LayerSpec>, prefix: &str, d: usize) {
    for (name, cin) in [
        ("cat_conv", 2 * d),
        ("shallow_conv", d),
        ("deep_conv", d),
        ("out_conv", 2 * d),
    ] {
        push(
            specs,
            format!("{prefix}.{name}"),
            vec![d, cin, 3, 3],
            Init::FanIn(cin * 9),
        );
        push(
            specs,
            format!("{prefix}.{name}.bias"),
            vec![d],
            Init::FanIn(cin * 9),
        );
    }
}

/// Every tensor the forward pass reads, in execution order.
pub fn layer_specs(config: &NetConfig) -> Vec<LayerSpec> {
    let c = config.base_channels;
    let [n1, n2, n3] = config.block_counts;
    let [h1, h2, h3] = config.heads_per_level;
    let m = config.ffn_expansion;
    let mut s = Vec::new();
    push(&mut s, "conv_in".into(), vec![c, 1, 1, 1], Init::FanIn(1));
    push(&mut s, "conv_in.bias".into(), vec![c], Init::FanIn(1));
    push(
        &mut s,
        "embedding".into(),
        vec![c, c, 3, 3],
        Init::FanIn(9 * c),
    );
    stage_specs(&mut s, "enc1", n1, c, h1, m);
    push(
        &mut s,
        "down1".into(),
        vec![2 * c, c, 4, 4],
        Init::FanIn(16 * c),
    );
    stage_specs(&mut s, "enc2", n2, 2 * c, h2, m);
    push(
        &mut s,
        "down2".into(),
        vec![4 * c, 2 * c, 4, 4],
        Init::FanIn(32 * c),
    );
    stage_specs(&mut s, "bottleneck", n3, 4 * c, h3, m);
    push(
        &mut s,
        "up2".into(),
        vec![4 * c, 2 * c, 2, 2],
        Init::FanIn(2 * c * 4),
    );
    push(
        &mut s,
        "up2.bias".into(),
        vec![2 * c],
        Init::FanIn(2 * c * 4),
    );
    fusion_specs(&mut s, "fusion2", 2 * c);
    stage_specs(&mut s, "dec2", n2, 2 * c, h2, m);
    push(
        &mut s,
        "up1".into(),
        vec![2 * c, c, 2, 2],
        Init::FanIn(c * 4),
    );
    push(&mut s, "up1.bias".into(), vec![c], Init::FanIn(c * 4));
    fusion_specs(&mut s, "fusion1", c);
    stage_specs(&mut s, "dec1", n1, c, h1, m);
    push(
        &mut s,
        "mapping".into(),
        vec![c, c, 3, 3],
        Init::FanIn(9 * c),
    );
    push(
        &mut s,
        "conv_out".into(),
        vec![config.out_bands, c, 1, 1],
        Init::FanIn(c),
    );
    push(
        &mut s,
        "conv_out.bias".into(),
        vec![config.out_bands],
        Init::FanIn(c),
    );
    s
}

/// Named tensors keyed by canonical path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(path.into(), tensor);
    }

    pub fn remove(&mut self, path: &str) -> Option<Tensor> {
        self.tensors.remove(path)
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.tensors
            .get(path)
            .ok_or_else(|| Error::MissingTensor(path.to_string()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(path)
            .ok_or_else(|| Error::MissingTensor(path.to_string()))
    }

    pub fn data(&self, path: &str) -> Result<&[f32]> {
        Ok(&self.get(path)?.data)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Checks that exactly the tensors of `config` are present with the right shapes.
    pub fn validate(&self, config: &NetConfig) -> Result<()> {
        let specs = layer_specs(config);
        for spec in &specs {
            let t = self.get(&spec.path)?;
            if t.shape != spec.shape {
                return Err(Error::TensorShape {
                    name: spec.path.clone(),
                    expected: spec.shape.clone(),
                    actual: t.shape.clone(),
                });
            }
        }
        if self.tensors.len() != specs.len() {
            let known: std::collections::HashSet<&str> =
                specs.iter().map(|s| s.path.as_str()).collect();
            if let Some(extra) = self.tensors.keys().find(|k| !known.contains(k.as_str())) {
                return Err(Error::UnexpectedTensor(extra.clone()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new(NSAW_MAGIC);
        w.u32(binio::u32_dim(self.tensors.len(), "tensor count")?);
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Invalid(format!("tensor name too long: {name}")))?;
            w.u16(len);
            w.bytes(name.as_bytes());
            let ndim = u8::try_from(t.shape.len())
                .map_err(|_| Error::Invalid(format!("too many dims for {name}")))?;
            w.u8(ndim);
            for &d in &t.shape {
                w.u32(binio::u32_dim(d, "tensor dim")?);
            }
            for &v in &t.data {
                w.f32(v);
            }
        }
        Ok(w.buf)
    }

    /// Parses an NSAW buffer without checking it against any configuration.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "NSAW");
        r.expect_magic(NSAW_MAGIC)?;
        let count = r.u32()? as usize;
        let mut ws = WeightSet::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.bytes(len)?)
                .map_err(|_| Error::Invalid("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Invalid(format!("tensor {name} size overflows")))?;
            let data = r.f32_vec(n)?;
            ws.insert(name, Tensor { shape, data });
        }
        if r.remaining() != 0 {
            return Err(Error::Invalid(format!(
                "{} trailing bytes after NSAW tensors",
                r.remaining()
            )));
        }
        Ok(ws)
    }
}

pub fn init_weights(config: &NetConfig, seed: u64) -> Result<WeightSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = WeightSet::new();
    for spec in layer_specs(config) {
        let n: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Ones => vec![1.0; n],
            Init::Zeros => vec![0.0; n],
            Init::FanIn(fan) => {
                let bound = 1.0 / (fan as f32).sqrt();
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            }
        };
        ws.insert(
            spec.path,
            Tensor {
                shape: spec.shape,
                data,
            },
        );
    }
    Ok(ws)
}

pub fn save_weights(ws: &WeightSet, path: &Path) -> Result<()> {
    binio::write_atomic(path, &ws.to_bytes()?)
}

/// Loads an NSAW file and validates it against `config`.
pub fn load_weights(path: &Path, config: &NetConfig) -> Result<WeightSet> {
    let ws = WeightSet::from_bytes(&binio::read_file(path)?)?;
    ws.validate(config)?;
    Ok(ws)
}
