//! Forward-pass and signal-processing results against independent reference
//! implementations.

mod support;

use std::f64::consts::PI;

use eres2net::audio::{add_noise, crop_or_duplicate, fbank, resample_speed, reverberate, speed_perturb, Waveform};
use eres2net::tensor::norm::{batch_norm_train, BN_EPS};
use eres2net::tensor::ops::{self, Activation};
use eres2net::tensor::{conv2d, linear, Tensor};
use proptest::prelude::*;
use support::*;

fn tensor(r: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(uniform(r, shape.iter().product(), -1.0, 1.0), shape).unwrap()
}

fn wave(samples: Vec<f32>) -> Waveform {
    Waveform::new(samples, 16000).unwrap()
}

fn sine(freq: f64, n: usize, amp: f64) -> Waveform {
    wave((0..n).map(|i| (amp * (2.0 * PI * freq * i as f64 / 16000.0).sin()) as f32).collect())
}

#[test]
fn conv2d_matches_nested_loops() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let (x, w) = (tensor(&mut r, &[2, 3, 8, 8]), tensor(&mut r, &[4, 3, 3, 3]));
        let out = conv2d(&x, &w, None, (2, 2), (1, 1)).unwrap();
        assert_eq!(out.shape(), [2, 4, 4, 4]);
        let reference = conv(&Arr::from_tensor(&x), &f64s(w.data()), [4, 3, 3, 3], None, 2, 1);
        for (a, b) in out.data().iter().zip(&reference.d) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }
}

#[test]
fn conv2d_identity_and_all_ones() {
    let ones = Tensor::full(&[1, 1, 3, 3], 1.0);
    let out = conv2d(&ones, &ones, None, (1, 1), (1, 1)).unwrap();
    assert_eq!(out.data()[4], 9.0);
    let mut r = rng(1);
    let x = tensor(&mut r, &[2, 1, 4, 5]);
    let id = conv2d(&x, &Tensor::full(&[1, 1, 1, 1], 1.0), None, (1, 1), (0, 0)).unwrap();
    assert_eq!(id.data(), x.data());
}

#[test]
fn batch_norm_normalizes_each_channel() {
    let mut r = rng(2);
    let x = tensor(&mut r, &[4, 2, 3, 3]);
    let (y, _, _) = batch_norm_train(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), BN_EPS).unwrap();
    let a = Arr::from_tensor(&y);
    for c in 0..2 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|b| (0..3).flat_map(move |h| (0..3).map(move |w| (b, h, w))))
            .map(|(b, h, w)| a.at(b, c, h, w))
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-5, "mean {m}");
        assert!((v - 1.0).abs() < 1e-3, "var {v}");
    }
}

#[test]
fn batch_norm_constant_input() {
    let x = Tensor::full(&[2, 3, 2, 2], 4.0);
    let beta = Tensor::full(&[3], 5.0);
    let (y, _, _) = batch_norm_train(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), BN_EPS).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    let (y, _, _) = batch_norm_train(&x, &Tensor::full(&[3], 1.0), &beta, BN_EPS).unwrap();
    assert!(y.data().iter().all(|&v| v == 5.0));
}

#[test]
fn silu_matches_scalar_formula() {
    let mut r = rng(3);
    let x = tensor(&mut r, &[64]);
    let y = ops::activation(&ops::scale(&x, 6.0), Activation::Silu);
    for (a, b) in y.data().iter().zip(x.data()) {
        let v = 6.0 * *b as f64;
        assert!((*a as f64 - v / (1.0 + (-v).exp())).abs() < 1e-6);
    }
    assert_eq!(Activation::Silu.apply(0.0), 0.0);
    assert_eq!(Activation::Tanh.apply(0.0), 0.0);
    assert_eq!(Activation::Relu.apply(-3.0), 0.0);
    assert_eq!(Activation::Relu.apply(2.5), 2.5);
}

#[test]
fn linear_matches_nested_loops() {
    let mut r = rng(4);
    let (x, w, b) = (tensor(&mut r, &[3, 5]), tensor(&mut r, &[7, 5]), tensor(&mut r, &[7]));
    let out = linear(&x, &w, Some(&b)).unwrap();
    let reference = support::linear(&Arr::from_tensor(&x), &f64s(w.data()), 7, Some(&f64s(b.data())));
    for (a, e) in out.data().iter().zip(&reference.d) {
        assert!((*a as f64 - e).abs() < 1e-5);
    }
    let hand = linear(
        &Tensor::new(vec![1.0, 2.0], &[1, 2]).unwrap(),
        &Tensor::new(vec![3.0, 4.0], &[1, 2]).unwrap(),
        Some(&Tensor::new(vec![5.0], &[1]).unwrap()),
    )
    .unwrap();
    assert_eq!(hand.data(), [16.0]);
}

#[test]
fn backward_of_simple_polynomials() {
    let x = Tensor::param(vec![1.5, -2.0, 0.25], &[3]).unwrap();
    ops::sum(&x).backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 3]);
    x.zero_grad();
    ops::sum(&ops::mul(&x, &x).unwrap()).backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![3.0, -4.0, 0.5]);
}

// --- Filterbank ----------------------------------------------------------

fn mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Straight-line FBank: naive DFT, triangles built directly from the
/// mel-spaced edge frequencies.
fn fbank_reference(x: &[f32], frame: usize) -> Vec<f64> {
    let seg: Vec<f64> = x[frame * 160..frame * 160 + 400].iter().map(|&v| v as f64).collect();
    let emph: Vec<f64> = (0..400)
        .map(|i| seg[i] - 0.97 * if i == 0 { seg[0] } else { seg[i - 1] })
        .collect();
    let windowed: Vec<f64> = emph
        .iter()
        .enumerate()
        .map(|(i, v)| v * (0.54 - 0.46 * (2.0 * PI * i as f64 / 399.0).cos()))
        .collect();
    let power: Vec<f64> = (0..=256)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in windowed.iter().enumerate() {
                let a = -2.0 * PI * (k * n) as f64 / 512.0;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .collect();
    let (lo, hi) = (mel(20.0), mel(7600.0));
    let edges: Vec<f64> = (0..82).map(|i| lo + i as f64 * (hi - lo) / 81.0).collect();
    (0..80)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let e: f64 = (0..=256)
                .map(|k| {
                    let f = mel(k as f64 * 16000.0 / 512.0);
                    let w = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    w * power[k]
                })
                .sum();
            e.max(1e-10).ln()
        })
        .collect()
}

#[test]
fn fbank_matches_straight_line_reference() {
    let mut r = rng(5);
    let x = uniform(&mut r, 1600, -0.5, 0.5);
    let feats = fbank(&wave(x.clone())).unwrap();
    assert_eq!(feats.frames(), 8);
    for t in [0, 3, 7] {
        let reference = fbank_reference(&x, t);
        for (a, b) in feats.row(t).iter().zip(&reference) {
            assert!((*a as f64 - b).abs() < 1e-4, "frame {t}: {a} vs {b}");
        }
    }
}

#[test]
fn fbank_peak_of_1khz_sine() {
    let feats = fbank(&sine(1000.0, 16000, 0.5)).unwrap();
    assert_eq!(feats.frames(), 98);
    let row = feats.row(50);
    let argmax = (0..80).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    // The filter whose centre lies nearest 1 kHz on the mel axis.
    let (lo, hi) = (mel(20.0), mel(7600.0));
    let expected = (0..80)
        .min_by(|&a, &b| {
            let ca = lo + (a + 1) as f64 * (hi - lo) / 81.0;
            let cb = lo + (b + 1) as f64 * (hi - lo) / 81.0;
            (ca - mel(1000.0)).abs().total_cmp(&(cb - mel(1000.0)).abs())
        })
        .unwrap();
    assert_eq!(argmax, expected);
}

#[test]
fn fbank_of_silence_is_the_floor() {
    let feats = fbank(&wave(vec![0.0; 4000])).unwrap();
    let floor = (1e-10f64).ln() as f32;
    assert!(feats.data().iter().all(|&v| v == floor));
}

#[test]
fn fbank_rejects_short_input() {
    assert!(fbank(&wave(vec![0.1; 399])).is_err());
    assert_eq!(fbank(&wave(vec![0.1; 400])).unwrap().frames(), 1);
}

// --- Augmentation --------------------------------------------------------

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[test]
fn mixed_snr_is_as_requested() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let clean = wave(uniform(&mut r, 8000, -0.6, 0.6));
        let noise = wave(uniform(&mut r, 3000, -0.2, 0.2));
        let mixed = add_noise(&clean, &noise, 7.0).unwrap();
        assert_eq!(mixed.len(), clean.len());
        let c = f64s(clean.samples());
        let n: Vec<f64> = mixed.samples().iter().zip(&c).map(|(&m, c)| m as f64 - c).collect();
        let snr = 10.0 * (power(&c) / power(&n)).log10();
        assert!((snr - 7.0).abs() < 0.01, "measured {snr}");
    }
}

#[test]
fn reverberation_matches_direct_convolution() {
    let mut r = rng(6);
    let clean = wave(uniform(&mut r, 2000, -0.3, 0.3));
    let mut h = uniform(&mut r, 120, -0.05, 0.05);
    h[0] = 0.6;
    let out = reverberate(&clean, &wave(h.clone())).unwrap();
    let x = clean.samples();
    let mut direct: Vec<f64> = (0..x.len())
        .map(|n| (0..h.len().min(n + 1)).map(|k| h[k] as f64 * x[n - k] as f64).sum())
        .collect();
    let peak = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        direct.iter_mut().for_each(|v| *v /= peak);
    }
    for (a, b) in out.samples().iter().zip(&direct) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
}

/// Frequency (1 Hz grid) with the largest DFT magnitude between `lo` and `hi`.
fn dominant_frequency(x: &[f32], lo: usize, hi: usize) -> f64 {
    let n = x.len() as f64;
    (lo..hi)
        .map(|f| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let a = 2.0 * PI * f as f64 * i as f64 / 16000.0;
                re += v as f64 * a.cos();
                im += v as f64 * a.sin();
            }
            (f as f64, (re * re + im * im) / n)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

#[test]
fn speed_perturbation_shifts_pitch() {
    let (fast, offset) = speed_perturb(&sine(440.0, 16000, 0.5), 1.1).unwrap();
    assert_eq!(offset, 2);
    let f = dominant_frequency(fast.samples(), 300, 700);
    // One DFT bin of the perturbed signal.
    let bin = 16000.0 / fast.len() as f64;
    assert!((f - 484.0).abs() <= bin, "dominant {f}");
}

proptest! {
    #[test]
    fn speed_round_trip_preserves_length(len in 50usize..4000, factor in 0.5f64..2.0) {
        let w = wave(vec![0.1; len]);
        let back = resample_speed(&resample_speed(&w, factor).unwrap(), 1.0 / factor).unwrap();
        prop_assert!((back.len() as i64 - len as i64).abs() <= 1);
    }

    #[test]
    fn crop_length_is_exact(len in 1usize..3000, target in 1usize..5000, seed in 0u64..1000) {
        let w = wave((0..len).map(|i| i as f32).collect());
        let out = crop_or_duplicate(&w, target, &mut rng(seed)).unwrap();
        prop_assert_eq!(out.len(), target);
    }

    #[test]
    fn noise_preserves_length_and_snr(len in 400usize..3000, snr in 0.0f64..15.0, seed in 0u64..100) {
        let mut r = rng(seed);
        let clean = wave(uniform(&mut r, len, -0.5, 0.5));
        let noise = wave(uniform(&mut r, 500, -0.5, 0.5));
        let mixed = add_noise(&clean, &noise, snr).unwrap();
        prop_assert_eq!(mixed.len(), len);
        let c = f64s(clean.samples());
        let n: Vec<f64> = mixed.samples().iter().zip(&c).map(|(&m, c)| m as f64 - c).collect();
        prop_assert!((10.0 * (power(&c) / power(&n)).log10() - snr).abs() < 0.01);
    }
}

#[test]
fn fbank_is_deterministic() {
    let mut r = rng(7);
    let w = wave(uniform(&mut r, 5000, -0.5, 0.5));
    assert_eq!(fbank(&w).unwrap(), fbank(&w).unwrap());
}
