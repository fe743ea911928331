//! Attentional feature fusion with tanh gating.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::ops::{self, Activation};
use crate::tensor::{BatchNorm, Conv2d, Tensor};

use super::params::{join, Module, Slot, SlotMut};
use super::Mode;

/// `Att = tanh(BN(W2 · SiLU(BN(W1 · [x; y]))))` with point-wise
/// `W1: 2C → C/r` and `W2: C/r → C`.
#[derive(Debug, Clone)]
pub struct Aff {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
}

impl Aff {
    pub fn new<R: Rng + ?Sized>(channels: usize, reduction: usize, rng: &mut R) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 || channels == 0 {
            return Err(Error::config(format!(
                "AFF channels {channels} not divisible by reduction ratio {reduction}"
            )));
        }
        let inter = channels / reduction;
        Ok(Self {
            conv1: Conv2d::new(2 * channels, inter, 1, 1, 0, true, rng)?,
            bn1: BatchNorm::new(inter),
            conv2: Conv2d::new(inter, channels, 1, 1, 0, true, rng)?,
            bn2: BatchNorm::new(channels),
        })
    }

    pub fn channels(&self) -> usize {
        self.conv2.out_channels()
    }

    /// Attention weights in `(-1, 1)`.
    pub fn weights(&self, x: &Tensor, y: &Tensor, mode: Mode) -> Result<Tensor> {
        if x.shape() != y.shape() {
            return Err(Error::shape("aff", x.shape(), y.shape()));
        }
        if x.rank() != 4 || x.shape()[1] != self.channels() {
            return Err(Error::shape("aff", x.shape(), &[self.channels()]));
        }
        let z = ops::concat_channels(&[x.clone(), y.clone()])?;
        let z = self.bn1.forward(&self.conv1.forward(&z)?, mode.training())?;
        let z = ops::activation(&z, Activation::Silu);
        let z = self.bn2.forward(&self.conv2.forward(&z)?, mode.training())?;
        Ok(ops::activation(&z, Activation::Tanh))
    }

    /// `x ⊙ (1 + Att) + y ⊙ (1 − Att)`.
    pub fn fuse(&self, x: &Tensor, y: &Tensor, mode: Mode) -> Result<Tensor> {
        let att = self.weights(x, y, mode)?;
        combine(x, y, &att)
    }

    pub fn zero_(&mut self) {
        for conv in [&mut self.conv1, &mut self.conv2] {
            conv.weight = Tensor::param(vec![0.0; conv.weight.numel()], conv.weight.shape()).expect("same shape");
            if let Some(b) = &mut conv.bias {
                *b = Tensor::param(vec![0.0; b.numel()], b.shape()).expect("same shape");
            }
        }
    }
}

/// Applies precomputed attention weights.
pub fn combine(x: &Tensor, y: &Tensor, att: &Tensor) -> Result<Tensor> {
    let gx = ops::mul(x, &ops::affine(att, 1.0, 1.0))?;
    let gy = ops::mul(y, &ops::affine(att, -1.0, 1.0))?;
    ops::add(&gx, &gy)
}

pub fn aff_weights(x: &Tensor, y: &Tensor, params: &Aff, mode: Mode) -> Result<Tensor> {
    params.weights(x, y, mode)
}

pub fn aff_fuse(x: &Tensor, y: &Tensor, params: &Aff, mode: Mode) -> Result<Tensor> {
    params.fuse(x, y, mode)
}

impl Module for Aff {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
    }
}
