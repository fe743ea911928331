//! Named traversal of parameters and buffers, and state dictionaries.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::{BatchNorm, Conv2d, Linear, Tensor};

pub enum Slot<'a> {
    Param(&'a Tensor),
    Buffer(&'a [f32]),
}

pub enum SlotMut<'a> {
    Param(&'a mut Tensor),
    Buffer(&'a mut Vec<f32>),
}

/// Anything holding named trainable tensors and non-trainable buffers.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&self.weight));
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), Slot::Param(b));
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        f(&join(prefix, "weight"), SlotMut::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), SlotMut::Param(b));
        }
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&self.weight));
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), Slot::Param(b));
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        f(&join(prefix, "weight"), SlotMut::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), SlotMut::Param(b));
        }
    }
}

impl Module for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "gamma"), Slot::Param(&self.gamma));
        f(&join(prefix, "beta"), Slot::Param(&self.beta));
        let st = self.state();
        f(&join(prefix, "running_mean"), Slot::Buffer(&st.running_mean));
        f(&join(prefix, "running_var"), Slot::Buffer(&st.running_var));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        f(&join(prefix, "gamma"), SlotMut::Param(&mut self.gamma));
        f(&join(prefix, "beta"), SlotMut::Param(&mut self.beta));
        let st = self.state_mut();
        f(&join(prefix, "running_mean"), SlotMut::Buffer(&mut st.running_mean));
        f(&join(prefix, "running_var"), SlotMut::Buffer(&mut st.running_var));
    }
}

/// Trainable tensors in traversal order.
pub fn parameters(m: &dyn Module) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, slot| {
        if let Slot::Param(t) = slot {
            out.push((name.to_string(), t.clone()));
        }
    });
    out
}

pub fn parameter_count(m: &dyn Module) -> usize {
    parameters(m).iter().map(|(_, t)| t.numel()).sum()
}

/// Parameters and buffers as a checkpoint, under `prefix`.
pub fn state_dict(m: &dyn Module, prefix: &str) -> Checkpoint {
    let mut ck = Checkpoint::default();
    m.visit(prefix, &mut |name, slot| match slot {
        Slot::Param(t) => ck.push(name, t.shape(), t.to_vec()),
        Slot::Buffer(b) => ck.push(name, &[b.len()], b.to_vec()),
    });
    ck
}

/// Loads every parameter and buffer of `m` from `ck` (looked up under
/// `prefix`). Entries whose names start with one of `ignore` are skipped;
/// any other unknown, missing or mis-shaped entry is an error.
pub fn load_state_dict(m: &mut dyn Module, ck: &Checkpoint, prefix: &str, ignore: &[&str]) -> Result<()> {
    let mut used = HashSet::new();
    let mut problems: Vec<String> = Vec::new();
    m.visit_mut(prefix, &mut |name, slot| {
        let Some(entry) = ck.get(name) else {
            problems.push(format!("{name} (missing)"));
            return;
        };
        used.insert(name.to_string());
        if entry.data.iter().any(|v| !v.is_finite()) {
            problems.push(format!("{name} (non-finite values)"));
            return;
        }
        match slot {
            SlotMut::Param(t) => {
                if t.shape() != entry.shape.as_slice() {
                    problems.push(format!("{name} (expected {:?}, found {:?})", t.shape(), entry.shape));
                    return;
                }
                *t = Tensor::param(entry.data.clone(), &entry.shape).expect("shape checked");
            }
            SlotMut::Buffer(b) => {
                if entry.shape != [b.len()] {
                    problems.push(format!("{name} (expected [{}], found {:?})", b.len(), entry.shape));
                    return;
                }
                if name.ends_with("running_var") && entry.data.iter().any(|&v| v < 0.0) {
                    problems.push(format!("{name} (negative variance)"));
                    return;
                }
                b.copy_from_slice(&entry.data);
            }
        }
    });
    problems.extend(
        ck.tensors
            .iter()
            .map(|t| t.name.as_str())
            .filter(|n| !used.contains(*n) && !ignore.iter().any(|p| n.starts_with(p)))
            .map(|n| format!("{n} (unexpected)")),
    );
    if !problems.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{}",
            problems.join(", ")
        )));
    }
    Ok(())
}
