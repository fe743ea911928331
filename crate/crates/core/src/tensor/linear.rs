use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::Tensor;

/// Fully connected layer `y = x·Wᵀ + b` with `W: (out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, bias: bool, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, (1.0 / input as f64).sqrt()).expect("finite std");
        let w = (0..input * output).map(|_| normal.sample(rng) as f32).collect();
        Ok(Self {
            weight: Tensor::param(w, &[output, input])?,
            bias: if bias {
                Some(Tensor::param(vec![0.0; output], &[output])?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, &self.weight, self.bias.as_ref())
    }
}

/// Affine map of `input (B, N)` by `weight (M, N)` and optional `bias (M)`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (&[b, n], &[m, wn]) = (input.shape(), weight.shape()) else {
        return Err(Error::shape("linear", input.shape(), weight.shape()));
    };
    if n != wn {
        return Err(Error::shape("linear", input.shape(), weight.shape()));
    }
    if let Some(bias) = bias {
        if bias.shape() != [m] {
            return Err(Error::shape("linear bias", bias.shape(), &[m]));
        }
    }
    let (x, w) = (input.data(), weight.data());
    let mut out = vec![0.0f32; b * m];
    for i in 0..b {
        let row = &x[i * n..(i + 1) * n];
        for j in 0..m {
            let acc: f64 = row
                .iter()
                .zip(&w[j * n..(j + 1) * n])
                .map(|(&a, &c)| a as f64 * c as f64)
                .sum();
            out[i * m + j] = (acc + bias.map_or(0.0, |t| t.data()[j] as f64)) as f32;
        }
    }
    let mut inputs = vec![input.clone(), weight.clone()];
    if let Some(bias) = bias {
        inputs.push(bias.clone());
    }
    let has_bias = bias.is_some();
    let (xc, wc) = (input.clone(), weight.clone());
    Ok(Tensor::from_op(
        out,
        vec![b, m],
        "linear",
        inputs,
        Box::new(move |g, _| {
            let (x, w) = (xc.data(), wc.data());
            let gx = xc.requires_grad().then(|| {
                let mut gx = vec![0.0f32; b * n];
                for i in 0..b {
                    for k in 0..n {
                        let acc: f64 = (0..m).map(|j| g[i * m + j] as f64 * w[j * n + k] as f64).sum();
                        gx[i * n + k] = acc as f32;
                    }
                }
                gx
            });
            let gw = wc.requires_grad().then(|| {
                let mut gw = vec![0.0f32; m * n];
                for j in 0..m {
                    for k in 0..n {
                        let acc: f64 = (0..b).map(|i| g[i * m + j] as f64 * x[i * n + k] as f64).sum();
                        gw[j * n + k] = acc as f32;
                    }
                }
                gw
            });
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(Some(
                    (0..m)
                        .map(|j| (0..b).map(|i| g[i * m + j] as f64).sum::<f64>() as f32)
                        .collect(),
                ));
            }
            grads
        }),
    ))
}
