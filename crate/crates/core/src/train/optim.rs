//! SGD with momentum, coupled L2 weight decay, and a warmup + cosine schedule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::params::{Module, Slot, SlotMut};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub lr_peak: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub velocity: BTreeMap<String, Vec<f32>>,
}

impl OptimState {
    pub fn new(total_epochs: usize) -> Self {
        Self {
            lr_peak: 0.2,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_epochs: 5,
            total_epochs,
            velocity: BTreeMap::new(),
        }
    }
}

/// Linear warmup from 0 to `lr_peak`, then cosine decay reaching 0 on the
/// last step of the run.
pub fn lr_at(step: usize, steps_per_epoch: usize, opt: &OptimState) -> f64 {
    let warm = opt.warmup_epochs * steps_per_epoch;
    let last = (opt.total_epochs * steps_per_epoch).saturating_sub(1);
    if step < warm {
        return opt.lr_peak * step as f64 / warm as f64;
    }
    if last <= warm {
        return opt.lr_peak;
    }
    let progress = ((step - warm) as f64 / (last - warm) as f64).min(1.0);
    opt.lr_peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// `v ← μ·v + g + λ·p`, `p ← p − lr·v` for every parameter of `modules`.
/// Parameters are addressed as `<prefix>.<name>`. Refuses the whole step if
/// any gradient is non-finite.
pub fn sgd_step(modules: &mut [(&str, &mut dyn Module)], opt: &mut OptimState, lr: f64) -> Result<()> {
    let mut grads: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    for (prefix, m) in modules.iter() {
        m.visit(prefix, &mut |name, slot| {
            if let Slot::Param(t) = slot {
                if let Some(g) = t.grad() {
                    grads.insert(name.to_string(), g);
                }
            }
        });
    }
    if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric(format!("non-finite gradient in {name}; step refused")));
    }
    let (mu, wd) = (opt.momentum, opt.weight_decay);
    let mut failure = None;
    for (prefix, m) in modules.iter_mut() {
        m.visit_mut(prefix, &mut |name, slot| {
            let SlotMut::Param(t) = slot else { return };
            if failure.is_some() {
                return;
            }
            let v = opt
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; t.numel()]);
            if v.len() != t.numel() {
                failure = Some(Error::shape("velocity", &[v.len()], t.shape()));
                return;
            }
            let g = grads.get(name);
            let mut next = t.to_vec();
            for (i, p) in next.iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i] as f64);
                let vi = mu * v[i] as f64 + gi + wd * *p as f64;
                v[i] = vi as f32;
                *p = (*p as f64 - lr * vi) as f32;
            }
            if next.iter().any(|p| !p.is_finite()) {
                failure = Some(Error::Numeric(format!("{name} became non-finite")));
                return;
            }
            *t = Tensor::param(next, t.shape()).expect("same shape");
        });
    }
    failure.map_or(Ok(()), Err)
}
