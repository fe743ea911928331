//! Gradient-check instances shared by the gradient suite and the acceptance
//! report. Each instance compares autograd gradients with central finite
//! differences of the 64-bit shadow for one seed.

use std::collections::BTreeMap;

use eres2net::model::{Aff, BlffBlock, BlockPlan, ERes2NetV2, Mode, ModelConfig, Module, Slot};
use eres2net::tensor::norm::{batch_norm_eval, batch_norm_train, BatchNormState, BN_EPS};
use eres2net::tensor::ops::{self, Activation};
use eres2net::tensor::{conv2d, linear, Tensor};
use eres2net::train::{aam_softmax_loss, AamConfig};
use rand_chacha::ChaCha8Rng;

use super::*;

pub const SEEDS: u64 = 10;
/// Step for smooth functions, refined once by extrapolation.
pub const STEP: f64 = 1e-3;
/// Step for graphs containing ReLU: small enough that no kink of the 64-bit
/// shadow lies within reach of the probe.
pub const KINK_STEP: f64 = 1e-6;
pub const OP_TOL: f64 = 1e-4;
pub const AAM_TOL: f64 = 1e-3;
pub const END_TO_END_TOL: f64 = 1e-3;

/// Analytic/finite-difference pairs collected over one instance.
#[derive(Debug, Default)]
pub struct Comparison {
    pairs: Vec<(f64, f64)>,
}

impl Comparison {
    pub fn add(&mut self, analytic: &[f64], fd: &[f64]) {
        assert_eq!(analytic.len(), fd.len());
        self.pairs.extend(analytic.iter().copied().zip(fd.iter().copied()));
    }

    /// `maxᵢ |aᵢ − fᵢ| / (|fᵢ| + 1e-6)`.
    pub fn strict(&self) -> f64 {
        let (a, f): (Vec<f64>, Vec<f64>) = self.pairs.iter().copied().unzip();
        max_rel_err(&a, &f)
    }

    /// As [`Comparison::strict`], after forgiving one 32-bit ulp of the
    /// instance's largest gradient entry. Gradients are stored in 32 bits, so
    /// entries that cancel to near zero carry that much round-off.
    pub fn rounded(&self) -> f64 {
        let scale = self.pairs.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
        let slack = f32::EPSILON as f64 * scale;
        self.pairs
            .iter()
            .map(|(a, f)| ((a - f).abs() - slack).max(0.0) / (f.abs() + 1e-6))
            .fold(0.0, f64::max)
    }

    /// `‖a − f‖ / max(‖a‖, ‖f‖)`.
    pub fn norm(&self) -> f64 {
        let (a, f): (Vec<f64>, Vec<f64>) = self.pairs.iter().copied().unzip();
        rel_err(&a, &f)
    }
}

pub struct Case {
    pub name: &'static str,
    pub tol: f64,
    /// Whole-network checks are judged on the norm-wise error.
    pub end_to_end: bool,
    pub run: fn(u64) -> Comparison,
}

impl Case {
    /// The error this case is judged on.
    pub fn judged(&self, c: &Comparison) -> f64 {
        if self.end_to_end {
            c.norm()
        } else {
            c.rounded()
        }
    }
}

pub fn cases() -> Vec<Case> {
    let case = |name, tol, run| Case {
        name,
        tol,
        end_to_end: false,
        run,
    };
    vec![
        case("conv2d", OP_TOL, conv2d_strided),
        case("conv2d_1x1", OP_TOL, conv2d_pointwise),
        case("batch_norm_train", OP_TOL, bn_training),
        case("batch_norm_eval", OP_TOL, bn_running),
        case("relu", OP_TOL, |s| activation(s, Activation::Relu, |v| v.max(0.0))),
        case("silu", OP_TOL, |s| activation(s, Activation::Silu, |v| v * sigmoid(v))),
        case("tanh", OP_TOL, |s| activation(s, Activation::Tanh, f64::tanh)),
        case("sigmoid", OP_TOL, |s| activation(s, Activation::Sigmoid, sigmoid)),
        case("elementwise", OP_TOL, elementwise),
        case("channel_layout", OP_TOL, layout),
        case("stats_pool", OP_TOL, pooling),
        case("linear", OP_TOL, linear_case),
        case("l2_normalize_rows", OP_TOL, row_norm),
        case("cross_entropy", OP_TOL, xent),
        case("aam_softmax_loss", AAM_TOL, aam),
        case("aff", OP_TOL, aff_case),
        case("blff_block", OP_TOL, block_case),
        Case {
            name: "end_to_end_stem_kernel",
            tol: END_TO_END_TOL,
            end_to_end: true,
            run: end_to_end,
        },
    ]
}

/// Compares the autograd gradient of every input of `build` with finite
/// differences of `shadow`.
fn check_inputs(
    inputs: &[Tensor],
    build: impl Fn(&[Tensor]) -> Tensor,
    shadow: impl Fn(&[Vec<f64>]) -> f64,
) -> Comparison {
    build(inputs).backward().unwrap();
    let base: Vec<Vec<f64>> = inputs.iter().map(|t| f64s(t.data())).collect();
    let mut out = Comparison::default();
    for (i, t) in inputs.iter().enumerate() {
        let mut args = base.clone();
        let fd = fd_grad_extrapolated(&base[i], STEP, |v| {
            args[i] = v.to_vec();
            shadow(&args)
        });
        out.add(&f64s(&t.grad().expect("input receives a gradient")), &fd);
    }
    out
}

fn probe(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    uniform(rng, n, -1.0, 1.0)
}

fn arr(v: &[f64], s: [usize; 4]) -> Arr {
    Arr::new(v.to_vec(), s)
}

fn conv2d_strided(seed: u64) -> Comparison {
    let mut r = rng(seed);
    let inputs = [param(&mut r, &[2, 3, 7, 6]), param(&mut r, &[4, 3, 3, 3]), param(&mut r, &[4])];
    let w = probe(&mut r, 2 * 4 * 4 * 3);
    check_inputs(
        &inputs,
        |t| ops::dot_const(&conv2d(&t[0], &t[1], Some(&t[2]), (2, 2), (1, 1)).unwrap(), &w).unwrap(),
        |a| dot(&conv(&arr(&a[0], [2, 3, 7, 6]), &a[1], [4, 3, 3, 3], Some(&a[2]), 2, 1), &f64s(&w)),
    )
}

fn conv2d_pointwise(seed: u64) -> Comparison {
    let mut r = rng(seed);
    let inputs = [param(&mut r, &[2, 4, 5, 5]), param(&mut r, &[3, 4, 1, 1])];
    let w = probe(&mut r, 2 * 3 * 3 * 3);
    check_inputs(
        &inputs,
        |t| ops::dot_const(&conv2d(&t[0], &t[1], None, (2, 2), (0, 0)).unwrap(), &w).unwrap(),
        |a| dot(&conv(&arr(&a[0], [2, 4, 5, 5]), &a[1], [3, 4, 1, 1], None, 2, 0), &f64s(&w)),
    )
}

fn bn_training(seed: u64) -> Comparison {
    let mut r = rng(seed);
    let inputs = [param(&mut r, &[3, 4, 3, 2]), param(&mut r, &[4]), param(&mut r, &[4])];
    let w = probe(&mut r, 72);
    check_inputs(
        &inputs,
        |t| ops::dot_const(&batch_norm_train(&t[0], &t[1], &t[2], BN_EPS).unwrap().0, &w).unwrap(),
        |a| dot(&bn_train(&arr(&a[0], [3, 4, 3, 2]), &a[1], &a[2]), &f64s(&w)),
    )
}

fn bn_running(seed: u64) -> Comparison {
    let mut r = rng(seed);
    let inputs = [param(&mut r, &[2, 3, 2, 2]), param(&mut r, &[3]), param(&mut r, &[3])];
    let state = BatchNormState {
        running_mean: uniform(&mut r, 3, -0.5, 0.5),
        running_var: uniform(&mut r, 3, 0.5, 2.0),
    };
    let w = probe(&mut r, 24);
    let (m, v) = (f64s(&state.running_mean), f64s(&state.running_var));
    check_inputs(
        &inputs,
        |t| ops::dot_const(&batch_norm_eval(&t[0], &t[1], &t[2], &state, BN_EPS).unwrap(), &w).unwrap(),
        |a| dot(&bn_eval(&arr(&a[0], [2, 3, 2, 2]), &a[1], &a[2], &m, &v), &f64s(&w)),
    )
}

fn activation(seed: u64, kind: Activation, f: fn(f64) -> f64) -> Comparison {
    let mut r = rng(seed);
    // Keep inputs away from the ReLU kink so the step never crosses it.
    let x: Vec<f32> = uniform(&mut r, 30, 0.05, 2.0)
        .into_iter()
        .enumerate()
        .map(|(i, v)| if i % 2 == 0 { v } else { -v })
        .collect();
    let inputs = [Tensor::param(x, &[30]).unwrap()];
    let w = probe(&mut r, 30);
    check_inputs(
        &inputs,
        |t| ops::dot_const(&ops::activation(&t[0], kind), &w).unwrap(),
        |a| a[0].iter().zip(&w).map(|(&v, &wi)| f(v) * wi as f64).sum(),
    )
}

fn elementwise(seed: u64) -> Comparison {
    // Multiples of 1/64 keep every intermediate exact in 32-bit storage.
    let dyadic = |r: &mut ChaCha8Rng, n: usize| -> Vec<f32> {
        uniform(r, n, -1.0, 1.0).into_iter().map(|v| (v * 64.0).round() / 64.0).collect()
    };
    let mut r = rng(seed);
    let inputs: Vec<Tensor> = (0..3).map(|_| Tensor::param(dyadic(&mut r, 16), &[2, 8]).unwrap()).collect();
    let w = dyadic(&mut r, 16);
    check_inputs(
        &inputs,
        |t| {
            let prod = ops::mul(&ops::add(&t[0], &t[1]).unwrap(), &ops::sub(&t[0], &t[2]).unwrap()).unwrap();
            let a = ops::dot_const(&prod, &w).unwrap();
            let b = ops::sum(&ops::scale(&t[1], 0.5));
            let c = ops::mean(&ops::affine(&t[2], -2.0, 1.0));
            ops::add(&ops::add(&a, &b).unwrap(), &c).unwrap()
        },
        |a| {
            let mut total = 0.0;
            for i in 0..16 {
                total += (a[0][i] + a[1][i]) * (a[0][i] - a[2][i]) * w[i] as f64;
                total += 0.5 * a[1][i];
                total += (1.0 - 2.0 * a[2][i]) / 16.0;
            }
            total
        },
    )
}

fn layout(seed: u64) -> Comparison {
    let mut r = rng(seed);
    let inputs = [param(&mut r, &[2, 4, 2, 3]), param(&mut r, &[2, 2, 2, 3])];
    let w = probe(&mut r, 2 * 5 * 6);
    check_inputs(
        &inputs,
        |t| {
            let parts = ops::split_channels(&t[0], 2).unwrap();
            let cat = ops::concat_channels(&[parts[1].clone(), t[1].clone(), parts[0].clone()]).unwrap();
            let mid = ops::narrow_channels(&cat, 1, 5).unwrap();
            ops::dot_const(&ops::reshape(&mid, &[10, 6]).unwrap(), &w).unwrap()
        },
        |a| {
            let x = arr(&a[0], [2, 4, 2, 3]);
            let cat = concat(&[narrow(&x, 2, 2), arr(&a[1], [2, 2, 2, 3]), narrow(&x, 0, 2)]);
            dot(&narrow(&cat, 1, 5), &f64s(&w))
        },
    )
}

fn pooling(seed: u64) -> Comparison {
    let mut r = rng(seed);
    let inputs = [param(&mut r, &[2, 3, 2, 5])];
    let w = probe(&mut r, 2 * 12);
    check_inputs(
        &inputs,
        |t| ops::dot_const(&ops::stats_pool(&t[0]).unwrap(), &w).unwrap(),
        |a| dot(&stats_pool(&arr(&a[0], [2, 3, 2, 5])), &f64s(&w)),
    )
}

fn linear_case(seed: u64) -> Comparison {
    let mut r = rng(seed);
    let inputs = [param(&mut r, &[3, 5]), param(&mut r, &[4, 5]), param(&mut r, &[4])];
    let w = probe(&mut r, 12);
    check_inputs(
        &inputs,
        |t| ops::dot_const(&linear(&t[0], &t[1], Some(&t[2])).unwrap(), &w).unwrap(),
        |a| dot(&super::linear(&arr(&a[0], [3, 5, 1, 1]), &a[1], 4, Some(&a[2])), &f64s(&w)),
    )
}

fn row_norm(seed: u64) -> Comparison {
    let mut r = rng(seed);
    let inputs = [param(&mut r, &[3, 6])];
    let w = probe(&mut r, 18);
    check_inputs(
        &inputs,
        |t| ops::dot_const(&ops::l2_normalize_rows(&t[0]).unwrap(), &w).unwrap(),
        |a| dot(&l2_rows(&arr(&a[0], [3, 6, 1, 1])), &f64s(&w)),
    )
}

fn xent(seed: u64) -> Comparison {
    let mut r = rng(seed);
    let inputs = [param(&mut r, &[4, 5])];
    let labels = [0, 3, 4, 1];
    check_inputs(
        &inputs,
        |t| ops::cross_entropy(&ops::scale(&t[0], 3.0), &labels).unwrap(),
        |a| cross_entropy(&arr(&a[0].iter().map(|v| 3.0 * v).collect::<Vec<_>>(), [4, 5, 1, 1]), &labels),
    )
}

fn aam(seed: u64) -> Comparison {
    let mut r = rng(seed);
    let inputs = [param(&mut r, &[6, 8]), param(&mut r, &[4, 8])];
    let labels = [0, 1, 2, 3, 1, 2];
    let cfg = AamConfig::new(4);
    check_inputs(
        &inputs,
        |t| aam_softmax_loss(&t[0], &labels, &t[1], &cfg).unwrap(),
        |a| aam_loss(&arr(&a[0], [6, 8, 1, 1]), &arr(&a[1], [4, 8, 1, 1]), &labels, cfg.margin, cfg.scale),
    )
}

/// Finite differences of `shadow` with respect to one named parameter.
fn param_fd(params: &Params, name: &str, step: f64, shadow: impl Fn(&Params) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    let base = params[name].0.clone();
    let eval = |v: &[f64]| {
        p.get_mut(name).unwrap().0 = v.to_vec();
        shadow(&p)
    };
    if step == KINK_STEP {
        fd_grad(&base, step, eval)
    } else {
        fd_grad_extrapolated(&base, step, eval)
    }
}

fn module_grads(m: &dyn Module) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    m.visit("", &mut |name, slot| {
        if let Slot::Param(t) = slot {
            out.insert(name.to_string(), f64s(&t.grad().unwrap_or_else(|| vec![0.0; t.numel()])));
        }
    });
    out
}

fn aff_case(seed: u64) -> Comparison {
    let mut r = rng(seed);
    let aff_m = Aff::new(8, 4, &mut r).unwrap();
    let shape = [2, 8, 3, 4];
    let (x, y) = (param(&mut r, &shape), param(&mut r, &shape));
    let w = probe(&mut r, 2 * 8 * 12);
    ops::dot_const(&aff_m.fuse(&x, &y, Mode::Train).unwrap(), &w).unwrap().backward().unwrap();
    let params = param_map(&aff_m);
    let shadow = |p: &Params, xa: &[f64], ya: &[f64]| dot(&aff(&arr(xa, shape), &arr(ya, shape), p, ""), &f64s(&w));
    let (xd, yd) = (f64s(x.data()), f64s(y.data()));
    let mut out = Comparison::default();
    out.add(&f64s(&x.grad().unwrap()), &fd_grad_extrapolated(&xd, STEP, |v| shadow(&params, v, &yd)));
    out.add(&f64s(&y.grad().unwrap()), &fd_grad_extrapolated(&yd, STEP, |v| shadow(&params, &xd, v)));
    for (name, g) in module_grads(&aff_m) {
        out.add(&g, &param_fd(&params, &name, STEP, |p| shadow(p, &xd, &yd)));
    }
    out
}

fn block_case(seed: u64) -> Comparison {
    let mut r = rng(seed);
    let plan = BlockPlan {
        stage: 3,
        index: 0,
        in_channels: 6,
        planes: 8,
        width: 4,
        out_channels: 16,
        stride: 2,
        local_aff: true,
    };
    let block = BlffBlock::new(plan, 2, 2, &mut r).unwrap();
    let x = param(&mut r, &[2, 6, 5, 6]);
    let out = block.forward(&x, Mode::Train).unwrap();
    let w = probe(&mut r, out.numel());
    ops::dot_const(&out, &w).unwrap().backward().unwrap();
    let params = param_map(&block);
    let shadow = |p: &Params, xa: &[f64]| dot(&super::block(&arr(xa, [2, 6, 5, 6]), p, "", 2, 2), &f64s(&w));
    let xd = f64s(x.data());
    let mut out = Comparison::default();
    out.add(&f64s(&x.grad().unwrap()), &fd_grad(&xd, KINK_STEP, |v| shadow(&params, v)));
    for (name, g) in module_grads(&block) {
        out.add(&g, &param_fd(&params, &name, KINK_STEP, |p| shadow(p, &xd)));
    }
    out
}

fn end_to_end(seed: u64) -> Comparison {
    let cfg = ModelConfig::preset("toy").unwrap();
    let mut r = rng(seed);
    let model = ERes2NetV2::new(&cfg, &mut r).unwrap();
    let x = Tensor::new(uniform(&mut r, 2 * 80 * 20, -1.0, 1.0), &[2, 1, 80, 20]).unwrap();
    ops::sum(&model.forward(&x, Mode::Train).unwrap()).backward().unwrap();
    let analytic = grads(&model).remove("stem.conv.weight").unwrap();
    let params = param_map(&model);
    let xa = Arr::from_tensor(&x);
    let mut out = Comparison::default();
    out.add(
        &analytic,
        &param_fd(&params, "stem.conv.weight", KINK_STEP, |p| network(&xa, p, &cfg).d.iter().sum()),
    );
    out
}
