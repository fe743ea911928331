//! Naive 64-bit reference implementations used as test oracles.

#![allow(dead_code)]

pub mod detection;
pub mod gradients;

use std::collections::HashMap;

use eres2net::model::{parameters, ERes2NetV2, ModelConfig};
use eres2net::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BN_EPS: f64 = 1e-5;
pub const POOL_EPS: f64 = 1e-5;

/// Dense NCHW array; 2-D data uses `[rows, cols, 1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arr {
    pub d: Vec<f64>,
    pub s: [usize; 4],
}

impl Arr {
    pub fn new(d: Vec<f64>, s: [usize; 4]) -> Self {
        assert_eq!(d.len(), s.iter().product::<usize>());
        Self { d, s }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let mut s = [1; 4];
        s[..t.rank()].copy_from_slice(t.shape());
        Self::new(t.data().iter().map(|&v| v as f64).collect(), s)
    }

    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        let [_, cc, hh, ww] = self.s;
        self.d[((b * cc + c) * hh + h) * ww + w]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Arr {
        Arr::new(self.d.iter().map(|&v| f(v)).collect(), self.s)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::param(uniform(rng, shape.iter().product(), -1.0, 1.0), shape).unwrap()
}

pub fn f64s(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn conv(x: &Arr, w: &[f64], ws: [usize; 4], bias: Option<&[f64]>, stride: usize, pad: usize) -> Arr {
    let [b, ci, h, wd] = x.s;
    let [co, wci, kh, kw] = ws;
    assert_eq!(ci, wci);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * co * oh * ow];
    for bi in 0..b {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb[o]);
                    for c in 0..ci {
                        let plane = &x.d[(bi * ci + c) * h * wd..(bi * ci + c + 1) * h * wd];
                        let kernel = &w[(o * ci + c) * kh * kw..(o * ci + c + 1) * kh * kw];
                        for u in 0..kh {
                            let iy = (y * stride + u) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &plane[iy as usize * wd..(iy as usize + 1) * wd];
                            for v in 0..kw {
                                let ix = (xx * stride + v) as isize - pad as isize;
                                if ix >= 0 && ix < wd as isize {
                                    acc += row[ix as usize] * kernel[u * kw + v];
                                }
                            }
                        }
                    }
                    out[((bi * co + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Arr::new(out, [b, co, oh, ow])
}

pub fn bn_train(x: &Arr, gamma: &[f64], beta: &[f64]) -> Arr {
    let [b, c, h, w] = x.s;
    let mut out = x.clone();
    let n = (b * h * w) as f64;
    for ch in 0..c {
        let idx = |bi: usize, i: usize| (bi * c + ch) * h * w + i;
        let mut m = 0.0;
        for bi in 0..b {
            for i in 0..h * w {
                m += x.d[idx(bi, i)];
            }
        }
        m /= n;
        let mut var = 0.0;
        for bi in 0..b {
            for i in 0..h * w {
                var += (x.d[idx(bi, i)] - m).powi(2);
            }
        }
        var /= n;
        for bi in 0..b {
            for i in 0..h * w {
                out.d[idx(bi, i)] = (x.d[idx(bi, i)] - m) / (var + BN_EPS).sqrt() * gamma[ch] + beta[ch];
            }
        }
    }
    out
}

pub fn bn_eval(x: &Arr, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64]) -> Arr {
    let [_, c, h, w] = x.s;
    let mut out = x.clone();
    for (i, v) in out.d.iter_mut().enumerate() {
        let ch = (i / (h * w)) % c;
        *v = (*v - mean[ch]) / (var[ch] + BN_EPS).sqrt() * gamma[ch] + beta[ch];
    }
    out
}

pub fn relu(x: &Arr) -> Arr {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu(x: &Arr) -> Arr {
    x.map(|v| v * sigmoid(v))
}

pub fn tanh(x: &Arr) -> Arr {
    x.map(f64::tanh)
}

pub fn add(a: &Arr, b: &Arr) -> Arr {
    assert_eq!(a.s, b.s);
    Arr::new(a.d.iter().zip(&b.d).map(|(x, y)| x + y).collect(), a.s)
}

pub fn concat(parts: &[Arr]) -> Arr {
    let [b, _, h, w] = parts[0].s;
    let c: usize = parts.iter().map(|p| p.s[1]).sum();
    let mut out = Vec::with_capacity(b * c * h * w);
    for bi in 0..b {
        for p in parts {
            let n = p.s[1] * h * w;
            out.extend_from_slice(&p.d[bi * n..(bi + 1) * n]);
        }
    }
    Arr::new(out, [b, c, h, w])
}

pub fn narrow(a: &Arr, start: usize, len: usize) -> Arr {
    let [b, c, h, w] = a.s;
    let mut out = Vec::with_capacity(b * len * h * w);
    for bi in 0..b {
        out.extend_from_slice(&a.d[(bi * c + start) * h * w..(bi * c + start + len) * h * w]);
    }
    Arr::new(out, [b, len, h, w])
}

pub fn stats_pool(x: &Arr) -> Arr {
    let [b, c, f, t] = x.s;
    let rows = c * f;
    let mut out = vec![0.0; b * 2 * rows];
    for bi in 0..b {
        for r in 0..rows {
            let seg = &x.d[(bi * rows + r) * t..(bi * rows + r + 1) * t];
            let m = seg.iter().sum::<f64>() / t as f64;
            let var = seg.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t as f64;
            out[bi * 2 * rows + r] = m;
            out[bi * 2 * rows + rows + r] = (var + POOL_EPS).sqrt();
        }
    }
    Arr::new(out, [b, 2 * rows, 1, 1])
}

/// `x (B, N) · wᵀ (O, N) + b`.
pub fn linear(x: &Arr, w: &[f64], out_dim: usize, bias: Option<&[f64]>) -> Arr {
    let (b, n) = (x.s[0], x.s[1] * x.s[2] * x.s[3]);
    let mut out = vec![0.0; b * out_dim];
    for i in 0..b {
        for o in 0..out_dim {
            let dot: f64 = (0..n).map(|j| x.d[i * n + j] * w[o * n + j]).sum();
            out[i * out_dim + o] = dot + bias.map_or(0.0, |bb| bb[o]);
        }
    }
    Arr::new(out, [b, out_dim, 1, 1])
}

pub fn l2_rows(x: &Arr) -> Arr {
    let (b, n) = (x.s[0], x.d.len() / x.s[0]);
    let mut out = x.clone();
    for i in 0..b {
        let norm = x.d[i * n..(i + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..n {
            out.d[i * n + j] /= norm;
        }
    }
    out
}

pub fn cross_entropy(logits: &Arr, labels: &[usize]) -> f64 {
    let (b, k) = (logits.s[0], logits.s[1]);
    let mut total = 0.0;
    for i in 0..b {
        let row = &logits.d[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
    }
    total / b as f64
}

/// Additive angular margin: `cos(θ + m)`, or `cos θ − m·sin m` past `π − m`.
pub fn margin_cos(c: f64, m: f64) -> f64 {
    if c > (std::f64::consts::PI - m).cos() {
        (c.clamp(-1.0, 1.0).acos() + m).cos()
    } else {
        c - m * m.sin()
    }
}

pub fn aam_loss(e: &Arr, w: &Arr, labels: &[usize], m: f64, s: f64) -> f64 {
    let k = w.s[0];
    let cos = linear(&l2_rows(e), &l2_rows(w).d, k, None);
    let mut logits = cos.map(|c| s * c);
    for (i, &y) in labels.iter().enumerate() {
        logits.d[i * k + y] = s * margin_cos(cos.d[i * k + y], m);
    }
    cross_entropy(&logits, labels)
}

/// Named parameters of a module as 64-bit vectors with their shapes.
pub type Params = HashMap<String, (Vec<f64>, Vec<usize>)>;

pub fn param_map(m: &dyn eres2net::model::Module) -> Params {
    let mut out = Params::new();
    m.visit("", &mut |name, slot| {
        let (v, s) = match slot {
            eres2net::model::Slot::Param(t) => (f64s(t.data()), t.shape().to_vec()),
            eres2net::model::Slot::Buffer(b) => (f64s(b), vec![b.len()]),
        };
        out.insert(name.to_string(), (v, s));
    });
    out
}

fn p<'a>(params: &'a Params, name: &str) -> &'a [f64] {
    &params.get(name).unwrap_or_else(|| panic!("no parameter {name}")).0
}

fn shape4(params: &Params, name: &str) -> [usize; 4] {
    params[name].1.clone().try_into().expect("4-D kernel")
}

fn pre(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Batch-statistics normalization with the named affine parameters.
pub fn bn_named(x: &Arr, params: &Params, prefix: &str) -> Arr {
    bn_train(x, p(params, &pre(prefix, "gamma")), p(params, &pre(prefix, "beta")))
}

pub fn conv_named(x: &Arr, params: &Params, prefix: &str, stride: usize, pad: usize) -> Arr {
    let wn = pre(prefix, "weight");
    let bias = params.get(&pre(prefix, "bias")).map(|b| b.0.as_slice());
    conv(x, p(params, &wn), shape4(params, &wn), bias, stride, pad)
}

/// Attentional feature fusion in training mode.
pub fn aff(x: &Arr, y: &Arr, params: &Params, prefix: &str) -> Arr {
    let z = concat(&[x.clone(), y.clone()]);
    let z = silu(&bn_named(&conv_named(&z, params, &pre(prefix, "conv1"), 1, 0), params, &pre(prefix, "bn1")));
    let att = tanh(&bn_named(&conv_named(&z, params, &pre(prefix, "conv2"), 1, 0), params, &pre(prefix, "bn2")));
    let d = x
        .d
        .iter()
        .zip(&y.d)
        .zip(&att.d)
        .map(|((a, b), t)| a * (1.0 + t) + b * (1.0 - t))
        .collect();
    Arr::new(d, x.s)
}

/// Bottleneck-like local fusion block in training mode.
pub fn block(x: &Arr, params: &Params, prefix: &str, scale: usize, stride: usize) -> Arr {
    let out = relu(&bn_named(&conv_named(x, params, &pre(prefix, "conv1"), stride, 0), params, &pre(prefix, "bn1")));
    let w = out.s[1] / scale;
    let mut parts: Vec<Arr> = Vec::new();
    for i in 0..scale {
        let g = narrow(&out, i * w, w);
        let sp = match parts.last() {
            None => g,
            Some(prev) if params.contains_key(&pre(prefix, &format!("fuse.{}.conv1.weight", i - 1))) => {
                aff(prev, &g, params, &pre(prefix, &format!("fuse.{}", i - 1)))
            }
            Some(prev) => add(prev, &g),
        };
        let c = conv_named(&sp, params, &pre(prefix, &format!("convs.{i}")), 1, 1);
        parts.push(relu(&bn_named(&c, params, &pre(prefix, &format!("bns.{i}")))));
    }
    let out = bn_named(&conv_named(&concat(&parts), params, &pre(prefix, "conv3"), 1, 0), params, &pre(prefix, "bn3"));
    let residual = if params.contains_key(&pre(prefix, "shortcut.conv.weight")) {
        bn_named(&conv_named(x, params, &pre(prefix, "shortcut.conv"), stride, 0), params, &pre(prefix, "shortcut.bn"))
    } else {
        x.clone()
    };
    relu(&add(&out, &residual))
}

/// Whole network in training mode: embeddings `(B, 192)`.
pub fn network(x: &Arr, params: &Params, cfg: &ModelConfig) -> Arr {
    let mut h = relu(&bn_named(&conv_named(x, params, "stem.conv", 1, 1), params, "stem.bn"));
    let mut stages = Vec::new();
    let plans = cfg.blocks();
    for stage in 1..=4 {
        for plan in plans.iter().filter(|b| b.stage == stage) {
            h = block(&h, params, &format!("stage{stage}.{}", plan.index), cfg.scale, plan.stride);
        }
        stages.push(h.clone());
    }
    let fuse_step = |from: &Arr, to: &Arr, name: &str| {
        let d = bn_named(&conv_named(from, params, &format!("{name}.down"), 2, 1), params, &format!("{name}.down_bn"));
        aff(&d, to, params, &format!("{name}.aff"))
    };
    let fused = if cfg.variant.cascade_fusion() {
        let mut acc = stages[0].clone();
        for (to, name) in [(1, "fuse12"), (2, "fuse23"), (3, "fuse34")] {
            acc = fuse_step(&acc, &stages[to], name);
        }
        acc
    } else {
        fuse_step(&stages[2], &stages[3], "fuse34")
    };
    let pooled = stats_pool(&fused);
    let (w, ws) = &params["embed.weight"];
    linear(&pooled, w, ws[0], Some(p(params, "embed.bias")))
}

/// Parameter gradients of `model` keyed by name.
pub fn grads(model: &ERes2NetV2) -> HashMap<String, Vec<f64>> {
    parameters(model)
        .into_iter()
        .filter_map(|(n, t)| t.grad().map(|g| (n, f64s(&g))))
        .collect()
}

/// Central differences at `h` and `h/2`, combined to cancel the `h²` error
/// term. Only valid where `f` is smooth within `h` of `x`.
pub fn fd_grad_extrapolated(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let coarse = fd_grad(x, h, &mut f);
    let fine = fd_grad(x, h / 2.0, &mut f);
    coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect()
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn fd_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            v[i] = x[i] + h;
            let up = f(&v);
            v[i] = x[i] - h;
            let down = f(&v);
            v[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn dot(a: &Arr, w: &[f64]) -> f64 {
    a.d.iter().zip(w).map(|(x, y)| x * y).sum()
}

/// `maxᵢ |aᵢ − bᵢ| / (|bᵢ| + 1e-6)`, with `b` the reference.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (y.abs() + 1e-6))
        .fold(0.0, f64::max)
}
