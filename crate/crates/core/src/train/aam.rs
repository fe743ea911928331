//! Additive angular margin softmax.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::params::{join, Module, Slot, SlotMut};
use crate::tensor::ops;
use crate::tensor::{linear, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AamConfig {
    pub margin: f64,
    pub scale: f64,
    pub num_classes: usize,
}

impl AamConfig {
    pub const MARGIN: f64 = 0.3;
    pub const SCALE: f64 = 32.0;

    pub fn new(num_classes: usize) -> Self {
        Self {
            margin: Self::MARGIN,
            scale: Self::SCALE,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) {
            return Err(Error::config(format!("margin must lie in [0, pi/2), got {}", self.margin)));
        }
        if !(self.scale > 0.0) {
            return Err(Error::config(format!("scale must be positive, got {}", self.scale)));
        }
        if self.num_classes == 0 {
            return Err(Error::config("classifier needs at least one class"));
        }
        Ok(())
    }
}

/// Class-centre matrix `(K, D)` of the AAM classifier.
#[derive(Debug, Clone)]
pub struct AamHead {
    pub weight: Tensor,
}

impl AamHead {
    pub fn new<R: Rng + ?Sized>(num_classes: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("finite std");
        let w = (0..num_classes * dim).map(|_| normal.sample(rng) as f32).collect();
        Ok(Self {
            weight: Tensor::param(w, &[num_classes, dim])?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Module for AamHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&self.weight));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        f(&join(prefix, "weight"), SlotMut::Param(&mut self.weight));
    }
}

/// `φ(cosθ) = cos(θ + m)`, replaced by `cosθ − m·sin m` past `θ = π − m`.
/// Returns the value and its derivative with respect to `cosθ`.
pub fn margin_cos(c: f64, m: f64) -> (f64, f64) {
    let (cm, sm) = (m.cos(), m.sin());
    if c > (std::f64::consts::PI - m).cos() {
        let c = c.clamp(-1.0, 1.0);
        let s = (1.0 - c * c).max(0.0).sqrt();
        let ds = if s > 1e-12 { -c / s } else { 0.0 };
        (c * cm - s * sm, cm - sm * ds)
    } else {
        (c - m * sm, 1.0)
    }
}

/// Scaled logits from cosines `(B, K)`: `s·φ(cos)` on each row's target
/// column, `s·cos` elsewhere.
pub fn aam_logits(cosines: &Tensor, labels: &[usize], margin: f64, scale: f64) -> Result<Tensor> {
    let &[b, k] = cosines.shape() else {
        return Err(Error::shape("aam", cosines.shape(), &[labels.len(), 0]));
    };
    if labels.len() != b {
        return Err(Error::shape("aam", cosines.shape(), &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    let mut out: Vec<f32> = cosines.data().iter().map(|&c| (scale * c as f64) as f32).collect();
    let mut slopes = vec![0.0f64; b];
    for (i, &y) in labels.iter().enumerate() {
        let (phi, d) = margin_cos(cosines.data()[i * k + y] as f64, margin);
        out[i * k + y] = (scale * phi) as f32;
        slopes[i] = scale * d;
    }
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        out,
        vec![b, k],
        "aam_logits",
        vec![cosines.clone()],
        Box::new(move |g, _| {
            let mut gx: Vec<f32> = g.iter().map(|&v| (scale * v as f64) as f32).collect();
            for (i, &y) in labels.iter().enumerate() {
                gx[i * k + y] = (slopes[i] * g[i * k + y] as f64) as f32;
            }
            vec![Some(gx)]
        }),
    ))
}

/// Cosines between L2-normalized embeddings and class weights.
pub fn cosine_logits(embeddings: &Tensor, class_weights: &Tensor) -> Result<Tensor> {
    let e = ops::l2_normalize_rows(embeddings)?;
    let w = ops::l2_normalize_rows(class_weights)?;
    linear(&e, &w, None)
}

/// Mean AAM-softmax cross-entropy over the batch.
pub fn aam_softmax_loss(
    embeddings: &Tensor,
    labels: &[usize],
    class_weights: &Tensor,
    cfg: &AamConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if class_weights.rank() != 2 || class_weights.shape()[0] != cfg.num_classes {
        return Err(Error::shape("aam classes", class_weights.shape(), &[cfg.num_classes]));
    }
    let cos = cosine_logits(embeddings, class_weights)?;
    let logits = aam_logits(&cos, labels, cfg.margin, cfg.scale)?;
    ops::cross_entropy(&logits, labels)
}
