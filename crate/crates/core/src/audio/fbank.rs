//! Log mel filterbank (FBank) features.
//!
//! 25 ms Hamming frames every 10 ms, per-frame pre-emphasis 0.97, power
//! spectrum of a 512-point DFT, 80 triangular filters spaced on the mel scale
//! between 20 Hz and 7600 Hz, natural log floored at 1e-10. No dither.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

use super::Waveform;

pub const NUM_MEL_BINS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub struct FbankConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub frame_shift: usize,
    pub fft_size: usize,
    pub num_bins: usize,
    pub preemphasis: f64,
    pub low_freq: f64,
    pub high_freq: f64,
    pub log_floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_length: 400,
            frame_shift: 160,
            fft_size: 512,
            num_bins: NUM_MEL_BINS,
            preemphasis: 0.97,
            low_freq: 20.0,
            high_freq: 7600.0,
            log_floor: 1e-10,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Row-major `frames × bins` matrix of log mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    bins: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, bins: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 || bins == 0 || data.len() != frames * bins {
            return Err(Error::shape("FeatureMatrix", &[frames, bins], &[data.len()]));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature at index {i}")));
        }
        Ok(Self { frames, bins, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    /// Subtracts the per-bin mean over the utterance.
    pub fn mean_normalized(&self) -> FeatureMatrix {
        let mut means = vec![0.0f64; self.bins];
        for t in 0..self.frames {
            for (m, &v) in means.iter_mut().zip(self.row(t)) {
                *m += v as f64;
            }
        }
        means.iter_mut().for_each(|m| *m /= self.frames as f64);
        let data = self
            .data
            .chunks_exact(self.bins)
            .flat_map(|row| row.iter().zip(&means).map(|(&v, &m)| (v as f64 - m) as f32))
            .collect();
        FeatureMatrix {
            frames: self.frames,
            bins: self.bins,
            data,
        }
    }

    /// Network layout `(frequency, time)`, flattened row-major.
    pub fn transposed(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.data.len()];
        for t in 0..self.frames {
            for f in 0..self.bins {
                out[f * self.frames + t] = self.data[t * self.bins + f];
            }
        }
        out
    }

    /// Debug dump: `"FBK1"`, u32 frames, u32 dim, row-major f32 LE.
    pub fn to_dump_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(12 + 4 * self.data.len());
        b.extend_from_slice(b"FBK1");
        b.extend_from_slice(&(self.frames as u32).to_le_bytes());
        b.extend_from_slice(&(self.bins as u32).to_le_bytes());
        for v in &self.data {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn from_dump_bytes(b: &[u8], path: &Path) -> Result<Self> {
        if b.len() < 12 || &b[0..4] != b"FBK1" {
            return Err(Error::format(path, 0, "bad magic, expected \"FBK1\""));
        }
        let frames = u32::from_le_bytes([b[4], b[5], b[6], b[7]]) as usize;
        let bins = u32::from_le_bytes([b[8], b[9], b[10], b[11]]) as usize;
        if bins != NUM_MEL_BINS {
            return Err(Error::format(path, 8, format!("dimension {bins}, expected {NUM_MEL_BINS}")));
        }
        if b.len() != 12 + 4 * frames * bins {
            return Err(Error::format(path, 12, "payload length does not match header"));
        }
        let data = b[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(frames, bins, data)
    }

    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_dump_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Triangular filter: first FFT bin it touches and its weights.
#[derive(Debug, Clone)]
struct MelFilter {
    start: usize,
    weights: Vec<f64>,
}

/// Reusable FBank extractor (window, filters and FFT plan precomputed).
#[derive(Clone)]
pub struct Fbank {
    config: FbankConfig,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fbank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fbank").field("config", &self.config).finish()
    }
}

impl Fbank {
    pub fn new(config: FbankConfig) -> Result<Self> {
        if config.frame_length > config.fft_size {
            return Err(Error::config("frame length exceeds FFT size"));
        }
        if !(0.0 <= config.low_freq && config.low_freq < config.high_freq)
            || config.high_freq > config.sample_rate as f64 / 2.0
        {
            return Err(Error::config("mel range must lie within (0, Nyquist]"));
        }
        let n = config.frame_length;
        let window = (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
            .collect();
        let filters = mel_filters(&config);
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Self {
            config,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &FbankConfig {
        &self.config
    }

    /// Frames produced for `samples` input samples, if at least one fits.
    pub fn num_frames(&self, samples: usize) -> Option<usize> {
        (samples >= self.config.frame_length)
            .then(|| 1 + (samples - self.config.frame_length) / self.config.frame_shift)
    }

    /// Center frequency (Hz) of each filter.
    pub fn center_frequencies(&self) -> Vec<f64> {
        let c = &self.config;
        let (lo, hi) = (hz_to_mel(c.low_freq), hz_to_mel(c.high_freq));
        let step = (hi - lo) / (c.num_bins + 1) as f64;
        (1..=c.num_bins)
            .map(|m| 700.0 * (((lo + m as f64 * step) / 1127.0).exp() - 1.0))
            .collect()
    }

    pub fn compute(&self, wave: &Waveform) -> Result<FeatureMatrix> {
        let c = &self.config;
        if wave.sample_rate() != c.sample_rate {
            return Err(Error::invalid(format!(
                "fbank expects {} Hz audio, got {} Hz",
                c.sample_rate,
                wave.sample_rate()
            )));
        }
        let frames = self.num_frames(wave.len()).ok_or_else(|| {
            Error::invalid(format!(
                "waveform of {} samples is shorter than one {}-sample frame",
                wave.len(),
                c.frame_length
            ))
        })?;
        let x = wave.samples();
        let n = c.frame_length;
        let mut buf = vec![Complex::new(0.0f64, 0.0); c.fft_size];
        let mut frame = vec![0.0f64; n];
        let mut out = Vec::with_capacity(frames * c.num_bins);
        let half = c.fft_size / 2 + 1;
        let mut power = vec![0.0f64; half];
        for t in 0..frames {
            let seg = &x[t * c.frame_shift..t * c.frame_shift + n];
            for (f, &s) in frame.iter_mut().zip(seg) {
                *f = s as f64;
            }
            for i in (1..n).rev() {
                frame[i] -= c.preemphasis * frame[i - 1];
            }
            frame[0] -= c.preemphasis * frame[0];
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < n {
                    Complex::new(frame[i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, v) in power.iter_mut().zip(&buf) {
                *p = v.norm_sqr();
            }
            for filt in &self.filters {
                let e: f64 = filt
                    .weights
                    .iter()
                    .zip(&power[filt.start..])
                    .map(|(w, p)| w * p)
                    .sum();
                out.push(e.max(c.log_floor).ln() as f32);
            }
        }
        FeatureMatrix::new(frames, c.num_bins, out)
    }
}

/// Triangles with vertices equally spaced in mel, evaluated on FFT bin
/// frequencies in the mel domain.
fn mel_filters(c: &FbankConfig) -> Vec<MelFilter> {
    let (lo, hi) = (hz_to_mel(c.low_freq), hz_to_mel(c.high_freq));
    let step = (hi - lo) / (c.num_bins + 1) as f64;
    let half = c.fft_size / 2 + 1;
    let bin_mel: Vec<f64> = (0..half)
        .map(|i| hz_to_mel(i as f64 * c.sample_rate as f64 / c.fft_size as f64))
        .collect();
    (0..c.num_bins)
        .map(|m| {
            let left = lo + m as f64 * step;
            let center = left + step;
            let right = center + step;
            let mut start = None;
            let mut weights = Vec::new();
            for (i, &mel) in bin_mel.iter().enumerate() {
                let w = if mel > left && mel <= center {
                    (mel - left) / (center - left)
                } else if mel > center && mel < right {
                    (right - mel) / (right - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    start.get_or_insert(i);
                    weights.push(w);
                } else if start.is_some() {
                    break;
                }
            }
            MelFilter {
                start: start.unwrap_or(0),
                weights,
            }
        })
        .collect()
}

/// FBank with the default configuration.
pub fn fbank(wave: &Waveform) -> Result<FeatureMatrix> {
    Fbank::new(FbankConfig::default())?.compute(wave)
}
