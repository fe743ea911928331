//! Additive noise, reverberation, speed perturbation and crop/duplicate.

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

use super::Waveform;

/// Published speed perturbation factors and their speaker-label blocks.
pub const SPEED_FACTORS: [(f64, usize); 3] = [(1.0, 0), (0.9, 1), (1.1, 2)];

fn same_rate(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::invalid(format!(
            "sample rate mismatch: {} vs {}",
            a.sample_rate(),
            b.sample_rate()
        )));
    }
    Ok(())
}

/// Noise looped or cropped to exactly `len` samples.
fn fit_length(noise: &[f32], len: usize) -> Vec<f32> {
    noise.iter().copied().cycle().take(len).collect()
}

/// Amplitude factor that brings `noise_power` to `snr_db` below `signal_power`.
pub fn noise_scale(signal_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (signal_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Mixes `noise` into `clean` at the requested signal-to-noise ratio.
pub fn add_noise(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    same_rate(clean, noise)?;
    let fitted = fit_length(noise.samples(), clean.len());
    let p_noise = fitted.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / fitted.len() as f64;
    if p_noise == 0.0 {
        return Err(Error::invalid("noise has zero power"));
    }
    let scale = noise_scale(clean.power(), p_noise, snr_db);
    let mixed = clean
        .samples()
        .iter()
        .zip(&fitted)
        .map(|(&c, &n)| (c as f64 + scale * n as f64) as f32)
        .collect();
    Waveform::new(mixed, clean.sample_rate())
}

/// Full linear convolution of `a` and `b` via FFT, in `f64`.
pub fn convolve(a: &[f32], b: &[f32]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |x: &[f32]| {
        let mut v: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let (mut fa, mut fb) = (lift(a), lift(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    fa.iter_mut().zip(&fb).for_each(|(x, y)| *x *= y);
    inv.process(&mut fa);
    fa.iter().take(out_len).map(|c| c.re / n as f64).collect()
}

/// Convolves with a room impulse response, keeps the first `len(clean)`
/// samples and scales down if the peak exceeds 1.
pub fn reverberate(clean: &Waveform, rir: &Waveform) -> Result<Waveform> {
    same_rate(clean, rir)?;
    if rir.samples().iter().all(|&s| s == 0.0) {
        return Err(Error::invalid("impulse response is empty"));
    }
    let mut wet = convolve(clean.samples(), rir.samples());
    wet.truncate(clean.len());
    let peak = wet.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    Waveform::new(wet.into_iter().map(|v| (v * gain) as f32).collect(), clean.sample_rate())
}

/// Changes speed (and pitch) by `factor` with linear interpolation:
/// output length `round(len / factor)`, `out[i] = in(i · factor)`.
pub fn resample_speed(w: &Waveform, factor: f64) -> Result<Waveform> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::invalid(format!("speed factor must be positive, got {factor}")));
    }
    let x = w.samples();
    let out_len = ((x.len() as f64 / factor).round() as usize).max(1);
    let last = x.len() - 1;
    let out = (0..out_len)
        .map(|i| {
            let pos = i as f64 * factor;
            let i0 = (pos.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = (pos - i0 as f64).clamp(0.0, 1.0);
            (x[i0] as f64 * (1.0 - frac) + x[i1] as f64 * frac) as f32
        })
        .collect();
    Waveform::new(out, w.sample_rate())
}

/// Speaker-label block of a speed factor: 0 for 1.0, 1 for 0.9, 2 for 1.1.
pub fn speed_label_offset(factor: f64) -> Option<usize> {
    SPEED_FACTORS
        .iter()
        .find(|(f, _)| (f - factor).abs() < 1e-9)
        .map(|&(_, o)| o)
}

/// Speed perturbation restricted to the published factors.
pub fn speed_perturb(w: &Waveform, factor: f64) -> Result<(Waveform, usize)> {
    let offset = speed_label_offset(factor).ok_or_else(|| {
        Error::invalid(format!("speed factor {factor} is not one of 1.0, 0.9, 1.1"))
    })?;
    if offset == 0 {
        return Ok((w.clone(), 0));
    }
    Ok((resample_speed(w, factor)?, offset))
}

/// Random window of exactly `target` samples, or the signal tiled
/// end-to-end and truncated when it is shorter.
pub fn crop_or_duplicate<R: Rng + ?Sized>(w: &Waveform, target: usize, rng: &mut R) -> Result<Waveform> {
    if target == 0 {
        return Err(Error::invalid("crop target must be positive"));
    }
    if w.len() >= target {
        return Ok(w.random_window(target, rng));
    }
    Waveform::new(fit_length(w.samples(), target), w.sample_rate())
}

/// Online augmentation: each effect is applied independently with its
/// probability. Speed perturbation is handled at the dataset level because
/// it changes labels.
#[derive(Debug, Clone)]
pub struct AugmentProfile {
    pub noise_prob: f64,
    pub reverb_prob: f64,
    pub snr_range: (f64, f64),
    pub noises: Vec<Waveform>,
    pub rirs: Vec<Waveform>,
}

impl AugmentProfile {
    pub const DEFAULT_PROB: f64 = 0.6;

    pub fn new(noises: Vec<Waveform>, rirs: Vec<Waveform>) -> Self {
        Self {
            noise_prob: Self::DEFAULT_PROB,
            reverb_prob: Self::DEFAULT_PROB,
            snr_range: (0.0, 15.0),
            noises,
            rirs,
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, w: &Waveform, rng: &mut R) -> Result<Waveform> {
        let mut out = w.clone();
        if !self.rirs.is_empty() && rng.gen_bool(self.reverb_prob) {
            let rir = &self.rirs[rng.gen_range(0..self.rirs.len())];
            out = reverberate(&out, rir)?;
        }
        if !self.noises.is_empty() && rng.gen_bool(self.noise_prob) {
            let noise = &self.noises[rng.gen_range(0..self.noises.len())];
            let snr = rng.gen_range(self.snr_range.0..=self.snr_range.1);
            let piece = noise.random_window(out.len(), rng);
            out = add_noise(&out, &piece, snr)?;
        }
        Ok(out)
    }
}
