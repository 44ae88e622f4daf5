//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use nirsnap::net::{gelu, layer_specs, FeatureMap, NetConfig, WeightSet};
use nirsnap::propagation::ComplexField;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
    FeatureMap::new(c, h, w, random_vec(c * h * w, -1.0, 1.0, seed)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// A small network whose every tensor, gains and temperatures included, is
/// randomized so that no term of the forward pass is trivially 1 or 0.
pub fn small_config() -> NetConfig {
    NetConfig {
        base_channels: 4,
        block_counts: [1, 1, 1],
        heads_per_level: [1, 2, 2],
        ffn_expansion: 2,
        out_bands: 3,
        ..NetConfig::default()
    }
}

pub fn random_weights(config: &NetConfig, seed: u64) -> WeightSet {
    let mut ws = nirsnap::net::init_weights(config, 0).unwrap();
    let mut r = rng(seed);
    for spec in layer_specs(config) {
        let t = ws.get_mut(&spec.path).unwrap();
        let (lo, hi) = if spec.path.ends_with(".gain") {
            (0.5, 1.5)
        } else if spec.path.ends_with(".temperature") {
            (0.5, 2.0)
        } else {
            (-0.5, 0.5)
        };
        t.data.iter_mut().for_each(|v| *v = r.random_range(lo..hi));
    }
    ws
}

fn w(ws: &WeightSet, path: &str) -> Vec<f64> {
    ws.data(path).unwrap().iter().map(|&v| v as f64).collect()
}

/// Direct cross-correlation, weight `[out, in/groups, k, k]`, zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &FeatureMap,
    weight: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    bias: Option<&[f64]>,
) -> FeatureMap {
    let (cin, h, wd) = x.shape();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let cin_g = cin / groups;
    let cout_g = cout / groups;
    let mut out = Vec::with_capacity(cout * oh * ow);
    for o in 0..cout {
        let g = o / cout_g;
        for r in 0..oh {
            for s in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for icg in 0..cin_g {
                    for a in 0..k {
                        for b in 0..k {
                            let ir = (r * stride + a) as isize - pad as isize;
                            let is = (s * stride + b) as isize - pad as isize;
                            if ir < 0 || is < 0 || ir >= h as isize || is >= wd as isize {
                                continue;
                            }
                            let wv = weight[((o * cin_g + icg) * k + a) * k + b];
                            acc += wv * x.get(g * cin_g + icg, ir as usize, is as usize);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    FeatureMap::new(cout, oh, ow, out).unwrap()
}

/// Stride-2, kernel-2 transposed convolution, weight `[in, out, 2, 2]`.
pub fn conv_transpose_oracle(
    x: &FeatureMap,
    weight: &[f64],
    cout: usize,
    bias: &[f64],
) -> FeatureMap {
    let (cin, h, wd) = x.shape();
    let mut out = Vec::with_capacity(cout * 4 * h * wd);
    for o in 0..cout {
        for r in 0..2 * h {
            for s in 0..2 * wd {
                let mut acc = bias[o];
                for i in 0..cin {
                    acc +=
                        weight[((i * cout + o) * 2 + r % 2) * 2 + s % 2] * x.get(i, r / 2, s / 2);
                }
                out.push(acc);
            }
        }
    }
    FeatureMap::new(cout, 2 * h, 2 * wd, out).unwrap()
}

pub fn layer_norm_oracle(x: &FeatureMap, gain: &[f64], bias: &[f64]) -> FeatureMap {
    let (c, h, wd) = x.shape();
    let mut out = vec![0.0; c * h * wd];
    for r in 0..h {
        for s in 0..wd {
            let vals: Vec<f64> = (0..c).map(|k| x.get(k, r, s)).collect();
            let mean = vals.iter().sum::<f64>() / c as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            for k in 0..c {
                out[(k * h + r) * wd + s] =
                    (vals[k] - mean) / (var + 1e-6).sqrt() * gain[k] + bias[k];
            }
        }
    }
    FeatureMap::new(c, h, wd, out).unwrap()
}

fn add(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    FeatureMap::new(a.channels(), a.height(), a.width(), data).unwrap()
}

fn concat(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    FeatureMap::new(a.channels() + b.channels(), a.height(), a.width(), data).unwrap()
}

/// Spectral attention with explicit `HW × C` token matrices.
/// Returns the output and each head's attention matrix `A[i][j]`.
pub fn msa_oracle(
    x: &FeatureMap,
    ws: &WeightSet,
    prefix: &str,
    heads: usize,
) -> (FeatureMap, Vec<Vec<Vec<f64>>>) {
    let (c, h, wd) = x.shape();
    let hw = h * wd;
    let tokens = |name: &str| -> Vec<Vec<f64>> {
        let m = w(ws, &format!("{prefix}.{name}"));
        (0..hw)
            .map(|n| {
                (0..c)
                    .map(|o| {
                        (0..c)
                            .map(|i| m[o * c + i] * x.get(i, n / wd, n % wd))
                            .sum()
                    })
                    .collect()
            })
            .collect()
    };
    let normalize = |mut t: Vec<Vec<f64>>| {
        for ch in 0..c {
            let norm = (0..hw)
                .map(|n| t[n][ch] * t[n][ch])
                .sum::<f64>()
                .sqrt()
                .max(1e-12);
            for row in t.iter_mut() {
                row[ch] /= norm;
            }
        }
        t
    };
    let q = normalize(tokens("q_proj"));
    let k = normalize(tokens("k_proj"));
    let v = tokens("v_proj");
    let sigma = w(ws, &format!("{prefix}.temperature"));
    let dh = c / heads;
    let mut merged = vec![vec![0.0; c]; hw];
    let mut maps = Vec::new();
    for hd in 0..heads {
        let mut a = vec![vec![0.0; dh]; dh];
        for i in 0..dh {
            for j in 0..dh {
                a[i][j] = sigma[hd]
                    * (0..hw)
                        .map(|n| k[n][hd * dh + i] * q[n][hd * dh + j])
                        .sum::<f64>();
            }
        }
        for j in 0..dh {
            let denom: f64 = a.iter().map(|row| row[j].exp()).sum();
            for row in a.iter_mut() {
                row[j] = row[j].exp() / denom;
            }
        }
        for n in 0..hw {
            for j in 0..dh {
                merged[n][hd * dh + j] = (0..dh).map(|i| v[n][hd * dh + i] * a[i][j]).sum();
            }
        }
        maps.push(a);
    }
    let to_map = |t: &Vec<Vec<f64>>| {
        let mut data = vec![0.0; c * hw];
        for n in 0..hw {
            for ch in 0..c {
                data[ch * hw + n] = t[n][ch];
            }
        }
        FeatureMap::new(c, h, wd, data).unwrap()
    };
    let proj = conv_oracle(
        &to_map(&merged),
        &w(ws, &format!("{prefix}.out_proj")),
        c,
        1,
        1,
        0,
        1,
        Some(&w(ws, &format!("{prefix}.out_proj.bias"))),
    );
    let vmap = to_map(&v);
    let p = conv_oracle(
        &vmap,
        &w(ws, &format!("{prefix}.pos_conv1")),
        c,
        3,
        1,
        1,
        c,
        None,
    )
    .map(gelu);
    let p = conv_oracle(
        &p,
        &w(ws, &format!("{prefix}.pos_conv2")),
        c,
        3,
        1,
        1,
        c,
        None,
    );
    (add(&proj, &p), maps)
}

pub fn ffn_oracle(x: &FeatureMap, ws: &WeightSet, prefix: &str) -> FeatureMap {
    let c = x.channels();
    let hidden = ws.get(&format!("{prefix}.expand")).unwrap().shape[0];
    let y = conv_oracle(
        x,
        &w(ws, &format!("{prefix}.expand")),
        hidden,
        1,
        1,
        0,
        1,
        None,
    )
    .map(gelu);
    let y = conv_oracle(
        &y,
        &w(ws, &format!("{prefix}.dwconv")),
        hidden,
        3,
        1,
        1,
        hidden,
        None,
    )
    .map(gelu);
    conv_oracle(
        &y,
        &w(ws, &format!("{prefix}.contract")),
        c,
        1,
        1,
        0,
        1,
        None,
    )
}

pub fn block_oracle(x: &FeatureMap, ws: &WeightSet, prefix: &str, heads: usize) -> FeatureMap {
    let n1 = layer_norm_oracle(
        x,
        &w(ws, &format!("{prefix}.ln1.gain")),
        &w(ws, &format!("{prefix}.ln1.bias")),
    );
    let x1 = add(x, &msa_oracle(&n1, ws, &format!("{prefix}.msa"), heads).0);
    let n2 = layer_norm_oracle(
        &x1,
        &w(ws, &format!("{prefix}.ln2.gain")),
        &w(ws, &format!("{prefix}.ln2.bias")),
    );
    add(&x1, &ffn_oracle(&n2, ws, &format!("{prefix}.ffn")))
}

pub fn fusion_oracle(
    shallow: &FeatureMap,
    deep: &FeatureMap,
    ws: &WeightSet,
    prefix: &str,
) -> FeatureMap {
    let c = shallow.channels();
    let conv = |x: &FeatureMap, name: &str| {
        conv_oracle(
            x,
            &w(ws, &format!("{prefix}.{name}")),
            c,
            3,
            1,
            1,
            1,
            Some(&w(ws, &format!("{prefix}.{name}.bias"))),
        )
    };
    let m = add(
        &conv(&concat(shallow, deep), "cat_conv"),
        &conv(shallow, "shallow_conv"),
    );
    conv(&concat(&conv(deep, "deep_conv"), &m), "out_conv")
}

/// Sensor-plane intensity by an explicit O(N⁴) centered DFT of the
/// chirp-multiplied field, normalized to unit sum.
pub fn dft_psf_oracle(field: &ComplexField, f: f64) -> Vec<f64> {
    let n = field.size;
    let c = (n / 2) as f64;
    let k = 2.0 * PI / field.wavelength;
    let pre: Vec<Complex64> = (0..n * n)
        .map(|idx| {
            let y = (idx / n) as f64 - c;
            let x = (idx % n) as f64 - c;
            let r2 = (x * x + y * y) * field.pixel_pitch * field.pixel_pitch;
            field.values[idx] * Complex64::from_polar(1.0, k * r2 / (2.0 * f))
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let arg = -2.0
                        * PI
                        * ((u as f64 - c) * (i as f64 - c) + (v as f64 - c) * (j as f64 - c))
                        / n as f64;
                    acc += pre[i * n + j] * Complex64::from_polar(1.0, arg);
                }
            }
            out[u * n + v] = acc.norm_sqr();
        }
    }
    let total: f64 = out.iter().sum();
    out.iter().map(|v| v / total).collect()
}

/// `y[q] = Σ_b w_b Σ_p x_b[p] · P_b[q − p + c]`, taps outside the PSF grid zero.
pub fn encode_oracle(
    cube: &[f64],
    h: usize,
    wd: usize,
    psfs: &[Vec<f64>],
    n: usize,
    weights: &[f64],
) -> Vec<f64> {
    let c = (n / 2) as isize;
    let mut out = vec![0.0; h * wd];
    for (b, psf) in psfs.iter().enumerate() {
        for qr in 0..h as isize {
            for qc in 0..wd as isize {
                let mut acc = 0.0;
                for pr in 0..h as isize {
                    for pc in 0..wd as isize {
                        let (kr, kc) = (qr - pr + c, qc - pc + c);
                        if kr < 0 || kc < 0 || kr >= n as isize || kc >= n as isize {
                            continue;
                        }
                        acc += cube[b * h * wd + (pr as usize) * wd + pc as usize]
                            * psf[kr as usize * n + kc as usize];
                    }
                }
                out[qr as usize * wd + qc as usize] += weights[b] * acc;
            }
        }
    }
    out
}

/// Mean SSIM over every valid 11×11 window, each window evaluated from its
/// own 2-D Gaussian weights.
pub fn ssim_oracle(a: &[f64], b: &[f64], h: usize, wd: usize) -> f64 {
    let k = 11;
    let sigma = 1.5f64;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * k + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for r in 0..=h - k {
        for c in 0..=wd - k {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let idx = (r + i) * wd + c + j;
                    ma += win[i * k + j] * a[idx];
                    mb += win[i * k + j] * b[idx];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let idx = (r + i) * wd + c + j;
                    let g = win[i * k + j];
                    va += g * (a[idx] - ma).powi(2);
                    vb += g * (b[idx] - mb).powi(2);
                    cov += g * (a[idx] - ma) * (b[idx] - mb);
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}
