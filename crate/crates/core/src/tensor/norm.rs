//! Batch normalization over `(B, H, W)` per channel.

use std::sync::Mutex;

use crate::error::{Error, Result};

use super::{dims4, Tensor};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Running statistics of a [`BatchNorm`], updated only in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some((c, v)) = self
            .running_var
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Numeric(format!("running_var[{c}] = {v}")));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    state: Mutex<BatchNormState>,
    pub eps: f32,
    pub momentum: f32,
}

impl Clone for BatchNorm {
    fn clone(&self) -> Self {
        Self {
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            state: Mutex::new(self.state()),
            eps: self.eps,
            momentum: self.momentum,
        }
    }
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::param(vec![1.0; channels], &[channels]).expect("non-empty"),
            beta: Tensor::param(vec![0.0; channels], &[channels]).expect("non-empty"),
            state: Mutex::new(BatchNormState::new(channels)),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    /// Snapshot of the running statistics.
    pub fn state(&self) -> BatchNormState {
        self.state.lock().expect("bn state lock poisoned").clone()
    }

    pub fn state_mut(&mut self) -> &mut BatchNormState {
        self.state.get_mut().expect("bn state lock poisoned")
    }

    pub fn set_state(&mut self, state: BatchNormState) -> Result<()> {
        if state.running_mean.len() != self.channels() || state.running_var.len() != self.channels() {
            return Err(Error::shape(
                "batchnorm state",
                &[self.channels()],
                &[state.running_mean.len(), state.running_var.len()],
            ));
        }
        state.validate()?;
        *self.state_mut() = state;
        Ok(())
    }

    /// Training mode normalizes with batch statistics and folds them into
    /// the running estimates; eval mode uses the running estimates only.
    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        if training {
            let (y, mean, var) = batch_norm_train(x, &self.gamma, &self.beta, self.eps)?;
            let (b, _, h, w) = dims4(x, "batchnorm")?;
            let n = (b * h * w) as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = self.momentum as f64;
            let mut st = self.state.lock().expect("bn state lock poisoned");
            for c in 0..self.channels() {
                let rm = st.running_mean[c] as f64;
                let rv = st.running_var[c] as f64;
                st.running_mean[c] = ((1.0 - m) * rm + m * mean[c]) as f32;
                st.running_var[c] = ((1.0 - m) * rv + m * var[c] * unbias) as f32;
            }
            Ok(y)
        } else {
            let st = self.state.lock().expect("bn state lock poisoned");
            batch_norm_eval(x, &self.gamma, &self.beta, &st, self.eps)
        }
    }
}

fn check_channels(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = dims4(x, "batchnorm")?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape("batchnorm", x.shape(), gamma.shape()));
    }
    Ok((b, c, h * w))
}

/// Training-mode normalization. Returns the output together with the batch
/// mean and biased batch variance per channel.
pub fn batch_norm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (b, c, hw) = check_channels(x, gamma, beta)?;
    let n = (b * hw) as f64;
    let xd = x.data();
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0;
        for bi in 0..b {
            s += xd[(bi * c + ch) * hw..][..hw].iter().map(|&v| v as f64).sum::<f64>();
        }
        let m = s / n;
        let mut ss = 0.0;
        for bi in 0..b {
            ss += xd[(bi * c + ch) * hw..][..hw]
                .iter()
                .map(|&v| (v as f64 - m).powi(2))
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = ss / n;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps as f64).sqrt()).collect();
    let mut out = vec![0.0f32; xd.len()];
    for bi in 0..b {
        for ch in 0..c {
            let g = gamma.data()[ch] as f64;
            let be = beta.data()[ch] as f64;
            let base = (bi * c + ch) * hw;
            for i in base..base + hw {
                out[i] = ((xd[i] as f64 - mean[ch]) * inv_std[ch] * g + be) as f32;
            }
        }
    }
    let (xc, gc) = (x.clone(), gamma.clone());
    let (mean_c, inv_c) = (mean.clone(), inv_std);
    let y = Tensor::from_op(
        out,
        x.shape().to_vec(),
        "batch_norm_train",
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _| {
            let xd = xc.data();
            let mut gx = vec![0.0f32; xd.len()];
            let mut ggamma = vec![0.0f32; c];
            let mut gbeta = vec![0.0f32; c];
            for ch in 0..c {
                let (m, is) = (mean_c[ch], inv_c[ch]);
                let mut sum_g = 0.0f64;
                let mut sum_gx = 0.0f64;
                for bi in 0..b {
                    let base = (bi * c + ch) * hw;
                    for i in base..base + hw {
                        let xhat = (xd[i] as f64 - m) * is;
                        sum_g += g[i] as f64;
                        sum_gx += g[i] as f64 * xhat;
                    }
                }
                ggamma[ch] = sum_gx as f32;
                gbeta[ch] = sum_g as f32;
                let gm = gc.data()[ch] as f64;
                for bi in 0..b {
                    let base = (bi * c + ch) * hw;
                    for i in base..base + hw {
                        let xhat = (xd[i] as f64 - m) * is;
                        let v = gm * is / n * (n * g[i] as f64 - sum_g - xhat * sum_gx);
                        gx[i] = v as f32;
                    }
                }
            }
            vec![Some(gx), Some(ggamma), Some(gbeta)]
        }),
    );
    Ok((y, mean, var))
}

/// Eval-mode normalization with fixed running statistics.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &BatchNormState,
    eps: f32,
) -> Result<Tensor> {
    let (b, c, hw) = check_channels(x, gamma, beta)?;
    if state.running_mean.len() != c || state.running_var.len() != c {
        return Err(Error::shape("batchnorm state", x.shape(), &[state.running_mean.len()]));
    }
    state.validate()?;
    let inv_std: Vec<f64> = state
        .running_var
        .iter()
        .map(|&v| 1.0 / (v as f64 + eps as f64).sqrt())
        .collect();
    let mean: Vec<f64> = state.running_mean.iter().map(|&v| v as f64).collect();
    let xd = x.data();
    let mut out = vec![0.0f32; xd.len()];
    for bi in 0..b {
        for ch in 0..c {
            let (g, be) = (gamma.data()[ch] as f64, beta.data()[ch] as f64);
            let base = (bi * c + ch) * hw;
            for i in base..base + hw {
                out[i] = ((xd[i] as f64 - mean[ch]) * inv_std[ch] * g + be) as f32;
            }
        }
    }
    let (xc, gc) = (x.clone(), gamma.clone());
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        "batch_norm_eval",
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _| {
            let xd = xc.data();
            let mut gx = vec![0.0f32; xd.len()];
            let mut ggamma = vec![0.0f64; c];
            let mut gbeta = vec![0.0f64; c];
            for bi in 0..b {
                for ch in 0..c {
                    let scale = gc.data()[ch] as f64 * inv_std[ch];
                    let base = (bi * c + ch) * hw;
                    for i in base..base + hw {
                        let gi = g[i] as f64;
                        gx[i] = (gi * scale) as f32;
                        ggamma[ch] += gi * (xd[i] as f64 - mean[ch]) * inv_std[ch];
                        gbeta[ch] += gi;
                    }
                }
            }
            let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect();
            vec![Some(gx), Some(to32(ggamma)), Some(to32(gbeta))]
        }),
    ))
}
