//! Minimal dense tensor with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer of `f32` in
//! row-major order. Operations that consume a tensor requiring gradients
//! record a backward closure on the result, so the graph is the tape: calling
//! [`Tensor::backward`] on a scalar walks it in reverse topological order and
//! accumulates gradients into every reachable tensor that requires them.
//!
//! Reductions accumulate in `f64`; storage stays `f32`.

pub mod checkpoint;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod ops;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use conv::{conv2d, Conv2d, ConvParams};
pub use linear::{linear, Linear};
pub use norm::{batch_norm_eval, batch_norm_train, BatchNorm, BatchNormState};
pub use ops::Activation;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Gradient rule of a recorded operation: maps the gradient of the output
/// (and the output values) to one optional gradient per input.
pub(crate) type BackwardFn = dyn Fn(&[f32], &[f32]) -> Vec<Option<Vec<f32>>> + Send + Sync;

struct GradFn {
    op: &'static str,
    inputs: Vec<Tensor>,
    backward: Box<BackwardFn>,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f32>>>,
    grad_fn: Option<GradFn>,
}

/// Dense row-major `f32` tensor. Cloning is cheap and shares storage.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad);
        if let Some(g) = &self.0.grad_fn {
            d.field("op", &g.op);
        }
        if self.numel() <= 8 {
            d.field("data", &self.0.data);
        }
        d.finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(data: Vec<f32>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    /// Creates a constant tensor; fails if `shape` does not cover `data`.
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::shape("Tensor::new", shape, &[data.len()]));
        }
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// Creates a leaf that participates in differentiation.
    pub fn param(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        Ok(Self::new(data, shape)?.with_requires_grad())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![0.0; numel_of(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self::build(vec![value; numel_of(shape)], shape.to_vec(), false, None)
    }

    pub fn scalar(value: f32) -> Self {
        Self::build(vec![value], vec![1], false, None)
    }

    /// Returns a fresh leaf with the same values that requires gradients.
    pub fn with_requires_grad(self) -> Self {
        let (data, shape) = match Arc::try_unwrap(self.0) {
            Ok(node) => (node.data, node.shape),
            Err(shared) => (shared.data.clone(), shared.shape.clone()),
        };
        Self::build(data, shape, true, None)
    }

    /// Result of a recorded op. The closure is only kept when some input
    /// requires gradients.
    pub(crate) fn from_op(
        data: Vec<f32>,
        shape: Vec<usize>,
        op: &'static str,
        inputs: Vec<Tensor>,
        backward: Box<BackwardFn>,
    ) -> Self {
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            inputs,
            backward,
        });
        Self::build(data, shape, requires_grad, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    /// Same values, cut from the tape.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Accumulated gradient, if any backward pass reached this tensor.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from this scalar through the recorded graph.
    ///
    /// Gradients accumulate across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward() needs a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f32>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(f) = &node.0.grad_fn {
                let input_grads = (f.backward)(&g, &node.0.data);
                debug_assert_eq!(input_grads.len(), f.inputs.len(), "{}", f.op);
                for (input, ig) in f.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(ig.len(), input.numel(), "{}", f.op);
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.id(), ig);
                        }
                    }
                }
            }
            node.accumulate_grad(&g);
        }
        Ok(())
    }

    /// Post-order over the requires-grad subgraph rooted here.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(f) = &t.0.grad_fn {
                for input in f.inputs.iter().filter(|i| i.requires_grad()) {
                    if !seen.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Name of the op that produced this tensor, if recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.op)
    }
}

/// Extents of a 4-D activation.
pub(crate) fn dims4(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(Error::shape(op, t.shape(), &[0, 0, 0, 0])),
    }
}
