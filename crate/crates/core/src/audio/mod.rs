//! Audio ingestion, FBank features and waveform augmentation.

pub mod augment;
pub mod fbank;
pub mod manifest;
pub mod wav;

use rand::Rng;

use crate::error::{Error, Result};

pub use augment::{add_noise, crop_or_duplicate, resample_speed, reverberate, speed_perturb, AugmentProfile};
pub use fbank::{fbank, Fbank, FbankConfig, FeatureMatrix};
pub use manifest::{read_manifest, ManifestEntry};
pub use wav::{load_wav, write_wav, SampleFormat};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono PCM samples in `[-1, 1]` with their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empty waveform"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean power `Σx²/N`.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / self.len() as f64
    }

    /// Random contiguous window of `len` samples; the whole signal if shorter.
    pub fn random_window<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Waveform {
        if self.len() <= len {
            return self.clone();
        }
        let start = rng.gen_range(0..=self.len() - len);
        Waveform {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}
