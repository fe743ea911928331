//! Bottleneck-like local feature fusion block.
//!
//! ```text
//! x ─ 1×1 (stride) ─ BN ─ ReLU ─ split s ─┬ g1 ─ 3×3 ─ BN ─ ReLU ───────────┐
//!                                         ├ g2 ⊕ prev ─ 3×3 ─ BN ─ ReLU ─────┤
//!                                         └ ...                              concat ─ 1×1 ─ BN ─ + ─ ReLU
//! x ────────────────────── identity or 1×1 (stride) + BN ────────────────────────────────────┘
//! ```
//!
//! `⊕` is AFF in the later stages and plain addition in the early ones.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::{BatchNorm, Conv2d, Tensor};

use super::aff::Aff;
use super::config::BlockPlan;
use super::params::{join, Module, Slot, SlotMut};
use super::Mode;

#[derive(Debug, Clone)]
pub struct BlffBlock {
    pub plan: BlockPlan,
    pub scale: usize,
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub convs: Vec<Conv2d>,
    pub bns: Vec<BatchNorm>,
    pub fusers: Vec<Aff>,
    pub conv3: Conv2d,
    pub bn3: BatchNorm,
    pub shortcut: Option<(Conv2d, BatchNorm)>,
}

impl BlffBlock {
    pub fn new<R: Rng + ?Sized>(plan: BlockPlan, scale: usize, reduction: usize, rng: &mut R) -> Result<Self> {
        if plan.width == 0 || scale < 2 {
            return Err(Error::config(format!(
                "block split width {} with scale {scale} is not splittable",
                plan.width
            )));
        }
        let w = plan.width;
        let inner = w * scale;
        let convs = (0..scale)
            .map(|_| Conv2d::new(w, w, 3, 1, 1, false, rng))
            .collect::<Result<Vec<_>>>()?;
        let fusers = if plan.local_aff {
            (1..scale).map(|_| Aff::new(w, reduction, rng)).collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let shortcut = if plan.has_projection() {
            Some((
                Conv2d::new(plan.in_channels, plan.out_channels, 1, plan.stride, 0, false, rng)?,
                BatchNorm::new(plan.out_channels),
            ))
        } else {
            None
        };
        Ok(Self {
            plan,
            scale,
            conv1: Conv2d::new(plan.in_channels, inner, 1, plan.stride, 0, false, rng)?,
            bn1: BatchNorm::new(inner),
            convs,
            bns: (0..scale).map(|_| BatchNorm::new(w)).collect(),
            fusers,
            conv3: Conv2d::new(inner, plan.out_channels, 1, 1, 0, false, rng)?,
            bn3: BatchNorm::new(plan.out_channels),
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let train = mode.training();
        let out = ops::relu(&self.bn1.forward(&self.conv1.forward(x)?, train)?);
        let groups = ops::split_channels(&out, self.scale)?;
        let mut parts: Vec<Tensor> = Vec::with_capacity(self.scale);
        for (i, g) in groups.iter().enumerate() {
            let sp = match parts.last() {
                None => g.clone(),
                Some(prev) if self.fusers.is_empty() => ops::add(prev, g)?,
                Some(prev) => self.fusers[i - 1].fuse(prev, g, mode)?,
            };
            parts.push(ops::relu(&self.bns[i].forward(&self.convs[i].forward(&sp)?, train)?));
        }
        let out = self.bn3.forward(&self.conv3.forward(&ops::concat_channels(&parts)?)?, train)?;
        let residual = match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok(ops::relu(&ops::add(&out, &residual)?))
    }
}

impl Module for BlffBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        for (i, (c, b)) in self.convs.iter().zip(&self.bns).enumerate() {
            c.visit(&join(prefix, &format!("convs.{i}")), f);
            b.visit(&join(prefix, &format!("bns.{i}")), f);
        }
        for (i, a) in self.fusers.iter().enumerate() {
            a.visit(&join(prefix, &format!("fuse.{i}")), f);
        }
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.bn3.visit(&join(prefix, "bn3"), f);
        if let Some((c, b)) = &self.shortcut {
            c.visit(&join(prefix, "shortcut.conv"), f);
            b.visit(&join(prefix, "shortcut.bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        for (i, (c, b)) in self.convs.iter_mut().zip(&mut self.bns).enumerate() {
            c.visit_mut(&join(prefix, &format!("convs.{i}")), f);
            b.visit_mut(&join(prefix, &format!("bns.{i}")), f);
        }
        for (i, a) in self.fusers.iter_mut().enumerate() {
            a.visit_mut(&join(prefix, &format!("fuse.{i}")), f);
        }
        self.conv3.visit_mut(&join(prefix, "conv3"), f);
        self.bn3.visit_mut(&join(prefix, "bn3"), f);
        if let Some((c, b)) = &mut self.shortcut {
            c.visit_mut(&join(prefix, "shortcut.conv"), f);
            b.visit_mut(&join(prefix, "shortcut.bn"), f);
        }
    }
}
