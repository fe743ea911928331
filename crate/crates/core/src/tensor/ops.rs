//! Elementwise maps, reductions and layout ops.

use crate::error::{Error, Result};

use super::{dims4, numel_of, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Tanh,
    Sigmoid,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at input `x` given output `y`.
    fn derivative(self, x: f32, y: f32) -> f32 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let out: Vec<f32> = x.data().iter().map(|&v| kind.apply(v)).collect();
    let xc = x.clone();
    Tensor::from_op(
        out,
        x.shape().to_vec(),
        "activation",
        vec![x.clone()],
        Box::new(move |g, y| {
            let gx = g
                .iter()
                .zip(xc.data())
                .zip(y)
                .map(|((&g, &x), &y)| g * kind.derivative(x, y))
                .collect();
            vec![Some(gx)]
        }),
    )
}

pub fn relu(x: &Tensor) -> Tensor {
    activation(x, Activation::Relu)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        out,
        a.shape().to_vec(),
        "add",
        vec![a.clone(), b.clone()],
        Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(
        out,
        a.shape().to_vec(),
        "sub",
        vec![a.clone(), b.clone()],
        Box::new(|g, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        out,
        a.shape().to_vec(),
        "mul",
        vec![a.clone(), b.clone()],
        Box::new(move |g, _| {
            let ga = g.iter().zip(bc.data()).map(|(g, b)| g * b).collect();
            let gb = g.iter().zip(ac.data()).map(|(g, a)| g * a).collect();
            vec![Some(ga), Some(gb)]
        }),
    ))
}

pub fn scale(a: &Tensor, s: f32) -> Tensor {
    let out = a.data().iter().map(|x| x * s).collect();
    Tensor::from_op(
        out,
        a.shape().to_vec(),
        "scale",
        vec![a.clone()],
        Box::new(move |g, _| vec![Some(g.iter().map(|v| v * s).collect())]),
    )
}

/// Elementwise `alpha·a + beta`.
pub fn affine(a: &Tensor, alpha: f32, beta: f32) -> Tensor {
    let out = a.data().iter().map(|x| alpha * x + beta).collect();
    Tensor::from_op(
        out,
        a.shape().to_vec(),
        "affine",
        vec![a.clone()],
        Box::new(move |g, _| vec![Some(g.iter().map(|v| v * alpha).collect())]),
    )
}

/// Sum of all elements as a one-element tensor.
pub fn sum(a: &Tensor) -> Tensor {
    let total: f64 = a.data().iter().map(|&v| v as f64).sum();
    let n = a.numel();
    Tensor::from_op(
        vec![total as f32],
        vec![1],
        "sum",
        vec![a.clone()],
        Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
    )
}

pub fn mean(a: &Tensor) -> Tensor {
    let n = a.numel();
    let total: f64 = a.data().iter().map(|&v| v as f64).sum();
    Tensor::from_op(
        vec![(total / n as f64) as f32],
        vec![1],
        "mean",
        vec![a.clone()],
        Box::new(move |g, _| vec![Some(vec![g[0] / n as f32; n])]),
    )
}

/// Weighted sum `Σ wᵢ·aᵢ` with constant weights; a convenient probe loss.
pub fn dot_const(a: &Tensor, weights: &[f32]) -> Result<Tensor> {
    if weights.len() != a.numel() {
        return Err(Error::shape("dot_const", a.shape(), &[weights.len()]));
    }
    let total: f64 = a
        .data()
        .iter()
        .zip(weights)
        .map(|(&x, &w)| x as f64 * w as f64)
        .sum();
    let w = weights.to_vec();
    Ok(Tensor::from_op(
        vec![total as f32],
        vec![1],
        "dot_const",
        vec![a.clone()],
        Box::new(move |g, _| vec![Some(w.iter().map(|w| w * g[0]).collect())]),
    ))
}

pub fn reshape(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if numel_of(shape) != a.numel() {
        return Err(Error::shape("reshape", a.shape(), shape));
    }
    Ok(Tensor::from_op(
        a.to_vec(),
        shape.to_vec(),
        "reshape",
        vec![a.clone()],
        Box::new(|g, _| vec![Some(g.to_vec())]),
    ))
}

/// `(outer, axis extent, inner)` decomposition around axis 1.
fn around_axis1(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2..].iter().product())
}

/// Concatenates along axis 1; all other extents must agree.
pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    if first.rank() < 2 {
        return Err(Error::shape("concat_channels", first.shape(), &[0, 0]));
    }
    for p in &parts[1..] {
        if p.rank() != first.rank() || p.shape()[0] != first.shape()[0] || p.shape()[2..] != first.shape()[2..] {
            return Err(Error::shape("concat_channels", first.shape(), p.shape()));
        }
    }
    let (outer, _, inner) = around_axis1(first.shape());
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &c) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[o * c * inner..(o + 1) * c * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = total;
    Ok(Tensor::from_op(
        out,
        shape,
        "concat_channels",
        parts.to_vec(),
        Box::new(move |g, _| {
            let mut grads: Vec<Vec<f32>> = widths
                .iter()
                .map(|&c| Vec::with_capacity(outer * c * inner))
                .collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (gp, &c) in grads.iter_mut().zip(&widths) {
                    gp.extend_from_slice(&g[off..off + c * inner]);
                    off += c * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }),
    ))
}

/// Slice `[start, start + len)` of axis 1.
pub fn narrow_channels(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    if a.rank() < 2 || len == 0 || start + len > a.shape()[1] {
        return Err(Error::invalid(format!(
            "narrow [{start}, {}) out of range for shape {:?}",
            start + len,
            a.shape()
        )));
    }
    let (outer, c, inner) = around_axis1(a.shape());
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * c + start) * inner;
        out.extend_from_slice(&a.data()[base..base + len * inner]);
    }
    let mut shape = a.shape().to_vec();
    shape[1] = len;
    Ok(Tensor::from_op(
        out,
        shape,
        "narrow_channels",
        vec![a.clone()],
        Box::new(move |g, _| {
            let mut ga = vec![0.0; outer * c * inner];
            for o in 0..outer {
                let base = (o * c + start) * inner;
                ga[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(ga)]
        }),
    ))
}

/// Splits axis 1 into `parts` equal groups.
pub fn split_channels(a: &Tensor, parts: usize) -> Result<Vec<Tensor>> {
    let c = *a.shape().get(1).unwrap_or(&0);
    if parts == 0 || c % parts != 0 {
        return Err(Error::invalid(format!("cannot split {c} channels into {parts} groups")));
    }
    let w = c / parts;
    (0..parts).map(|i| narrow_channels(a, i * w, w)).collect()
}

/// Variance floor inside the pooled standard deviation.
pub const POOL_STD_EPS: f64 = 1e-5;

/// Temporal statistics pooling.
///
/// `[B, C, F, T]` becomes `[B, 2·C·F]`: per (channel, frequency) row the mean
/// over time, followed by the standard deviation `sqrt(var + eps)` with the
/// population variance.
pub fn stats_pool(x: &Tensor) -> Result<Tensor> {
    let (b, c, f, t) = dims4(x, "stats_pool")?;
    let rows = c * f;
    let mut out = vec![0.0f32; b * 2 * rows];
    let mut means = vec![0.0f64; b * rows];
    let mut stds = vec![0.0f64; b * rows];
    for bi in 0..b {
        for r in 0..rows {
            let seg = &x.data()[(bi * rows + r) * t..(bi * rows + r + 1) * t];
            let m = seg.iter().map(|&v| v as f64).sum::<f64>() / t as f64;
            let var = seg.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / t as f64;
            let s = (var + POOL_STD_EPS).sqrt();
            means[bi * rows + r] = m;
            stds[bi * rows + r] = s;
            out[bi * 2 * rows + r] = m as f32;
            out[bi * 2 * rows + rows + r] = s as f32;
        }
    }
    let xc = x.clone();
    Ok(Tensor::from_op(
        out,
        vec![b, 2 * rows],
        "stats_pool",
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![0.0f32; b * rows * t];
            for bi in 0..b {
                for r in 0..rows {
                    let gm = g[bi * 2 * rows + r] as f64;
                    let gs = g[bi * 2 * rows + rows + r] as f64;
                    let m = means[bi * rows + r];
                    let s = stds[bi * rows + r];
                    let base = (bi * rows + r) * t;
                    for ti in 0..t {
                        let xv = xc.data()[base + ti] as f64;
                        let v = gm / t as f64 + gs * (xv - m) / (t as f64 * s);
                        gx[base + ti] = v as f32;
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Divides each row of a `[B, N]` tensor by its L2 norm.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let [b, n] = *x.shape() else {
        return Err(Error::shape("l2_normalize_rows", x.shape(), &[0, 0]));
    };
    let mut norms = vec![0.0f64; b];
    let mut out = vec![0.0f32; b * n];
    for i in 0..b {
        let row = &x.data()[i * n..(i + 1) * n];
        let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Numeric(format!("row {i} has norm {norm}")));
        }
        norms[i] = norm;
        for j in 0..n {
            out[i * n + j] = (row[j] as f64 / norm) as f32;
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![b, n],
        "l2_normalize_rows",
        vec![x.clone()],
        Box::new(move |g, y| {
            let mut gx = vec![0.0f32; b * n];
            for i in 0..b {
                let gy = &g[i * n..(i + 1) * n];
                let yr = &y[i * n..(i + 1) * n];
                let proj: f64 = gy.iter().zip(yr).map(|(&a, &b)| a as f64 * b as f64).sum();
                for j in 0..n {
                    gx[i * n + j] = ((gy[j] as f64 - proj * yr[j] as f64) / norms[i]) as f32;
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Mean softmax cross-entropy of `[B, K]` logits against integer labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let [b, k] = *logits.shape() else {
        return Err(Error::shape("cross_entropy", logits.shape(), &[0, 0]));
    };
    if labels.len() != b {
        return Err(Error::shape("cross_entropy", logits.shape(), &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = vec![0.0f64; b * k];
    let mut total = 0.0f64;
    for i in 0..b {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let lse = max + z.ln();
        total += lse - row[labels[i]] as f64;
        for j in 0..k {
            probs[i * k + j] = (row[j] as f64 - lse).exp();
        }
    }
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![(total / b as f64) as f32],
        vec![1],
        "cross_entropy",
        vec![logits.clone()],
        Box::new(move |g, _| {
            let scale = g[0] as f64 / b as f64;
            let mut gl = vec![0.0f32; b * k];
            for i in 0..b {
                for j in 0..k {
                    let onehot = if j == labels[i] { 1.0 } else { 0.0 };
                    gl[i * k + j] = ((probs[i * k + j] - onehot) * scale) as f32;
                }
            }
            vec![Some(gl)]
        }),
    ))
}
