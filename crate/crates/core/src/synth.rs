//! Deterministic synthetic speakers, noise and room responses.
//!
//! A speaker is a glottal pulse train at a characteristic pitch, shaped by a
//! spectral tilt and a vocal tract of characteristic length. Utterances are
//! sequences of syllables drawn from a shared vowel inventory, so the speaker
//! is carried by pitch, tilt, tract scaling and upper formants while the
//! content changes from syllable to syllable.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::{write_wav, SampleFormat, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::SeedStreams;

/// Shared vowel targets `(F1, F2)` in Hz for a unit tract scale.
pub const VOWELS: [(f64, f64); 6] = [
    (280.0, 2250.0),
    (400.0, 2000.0),
    (550.0, 1770.0),
    (700.0, 1200.0),
    (450.0, 850.0),
    (320.0, 900.0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerVoice {
    pub f0: f64,
    /// One-pole low-pass coefficient applied to the pulse train.
    pub tilt: f64,
    /// Formant scale from vocal-tract length.
    pub tract: f64,
    /// Speaker-specific multipliers on the vowel F1 and F2 targets.
    pub vowel_bias: [f64; 2],
    /// `(centre Hz, bandwidth Hz)` of F3 and F4, which vary little with the vowel.
    pub upper_formants: [(f64, f64); 2],
    pub bandwidth_scale: f64,
    pub breathiness: f64,
}

impl SpeakerVoice {
    /// Voice `index` of `count`; pitches are spread log-uniformly over
    /// 85–255 Hz and shuffled against the other traits.
    pub fn generate<R: Rng + ?Sized>(index: usize, count: usize, rng: &mut R) -> Self {
        let pos = (index as f64 + rng.gen_range(0.2..0.8)) / count as f64;
        let tract = rng.gen_range(0.82..1.22);
        Self {
            f0: 85.0 * 3f64.powf(pos),
            tilt: rng.gen_range(0.5..0.95),
            tract,
            vowel_bias: [rng.gen_range(0.9..1.1), rng.gen_range(0.9..1.1)],
            upper_formants: [
                (2600.0 * tract * rng.gen_range(0.92..1.08), rng.gen_range(120.0..220.0)),
                (3500.0 * tract * rng.gen_range(0.92..1.08), rng.gen_range(180.0..320.0)),
            ],
            bandwidth_scale: rng.gen_range(0.8..1.3),
            breathiness: rng.gen_range(0.0..0.15),
        }
    }

    /// Resonators `(centre, bandwidth, gain)` while producing `vowel`.
    fn formants(&self, vowel: (f64, f64)) -> [(f64, f64, f64); 4] {
        let bw = self.bandwidth_scale;
        [
            (vowel.0 * self.tract * self.vowel_bias[0], 80.0 * bw, 1.0),
            (vowel.1 * self.tract * self.vowel_bias[1], 100.0 * bw, 0.7),
            (self.upper_formants[0].0, self.upper_formants[0].1 * bw, 0.45),
            (self.upper_formants[1].0, self.upper_formants[1].1 * bw, 0.3),
        ]
    }
}

/// Two-pole resonator `y[n] = g·x[n] + 2r·cos(ω)·y[n−1] − r²·y[n−2]`.
fn resonate(x: &[f64], centre: f64, bandwidth: f64, rate: f64) -> Vec<f64> {
    let r = (-PI * bandwidth / rate).exp();
    let w = 2.0 * PI * centre / rate;
    let (a1, a2) = (2.0 * r * w.cos(), -r * r);
    let gain = 1.0 - r;
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let y1 = if n >= 1 { y[n - 1] } else { 0.0 };
        let y2 = if n >= 2 { y[n - 2] } else { 0.0 };
        y[n] = gain * x[n] + a1 * y1 + a2 * y2;
    }
    y
}

/// One voiced syllable of `len` samples with a linear pitch glide.
fn syllable<R: Rng + ?Sized>(voice: &SpeakerVoice, f0: f64, len: usize, rng: &mut R) -> Vec<f64> {
    let rate = SAMPLE_RATE as f64;
    let start = f0 * rng.gen_range(0.94..1.06);
    let end = f0 * rng.gen_range(0.9..1.1);
    let vowel = VOWELS[rng.gen_range(0..VOWELS.len())];
    let mut phase = rng.gen_range(0.0..1.0);
    let mut lp = 0.0;
    let src: Vec<f64> = (0..len)
        .map(|i| {
            let frac = i as f64 / len as f64;
            phase += (start + (end - start) * frac) / rate;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            let breath: f64 = StandardNormal.sample(rng);
            lp = voice.tilt * lp + (1.0 - voice.tilt) * (pulse + voice.breathiness * breath * 0.1);
            lp
        })
        .collect();
    let mut out = vec![0.0; len];
    for (c, bw, g) in voice.formants(vowel) {
        let y = resonate(&src, c, bw, rate);
        out.iter_mut().zip(&y).for_each(|(o, y)| *o += g * y);
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o *= (PI * (i as f64 + 0.5) / len as f64).sin().powf(0.6);
    }
    out
}

/// One utterance of `voice`: syllables separated by short pauses, with
/// background noise at 20–35 dB SNR, peak-normalized to 0.5.
pub fn synth_utterance<R: Rng + ?Sized>(voice: &SpeakerVoice, seconds: f64, rng: &mut R) -> Result<Waveform> {
    let rate = SAMPLE_RATE as f64;
    let n = (seconds * rate).round() as usize;
    if n == 0 {
        return Err(Error::invalid("utterance duration must be positive"));
    }
    let f0 = voice.f0 * rng.gen_range(0.96..1.04);
    let mut voiced = vec![0.0; n];
    let mut pos = (rng.gen_range(0.0..0.1) * rate) as usize;
    while pos < n {
        let len = (rng.gen_range(0.16..0.32) * rate) as usize;
        let seg = syllable(voice, f0, len, rng);
        let gain = rng.gen_range(0.6..1.0);
        for (v, s) in voiced[pos..].iter_mut().zip(&seg) {
            *v += gain * s;
        }
        pos += len + (rng.gen_range(0.02..0.12) * rate) as usize;
    }
    let power = voiced.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let snr_db = rng.gen_range(20.0..35.0);
    let noise_std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    for v in voiced.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += noise_std * z;
    }
    let peak = voiced.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    Waveform::new(voiced.iter().map(|v| (0.5 * v / peak) as f32).collect(), SAMPLE_RATE)
}

/// Low-passed Gaussian noise for additive augmentation.
pub fn synth_noise<R: Rng + ?Sized>(seconds: f64, rng: &mut R) -> Result<Waveform> {
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let a = rng.gen_range(0.0..0.9);
    let mut state = 0.0;
    let samples = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            state = a * state + (1.0 - a) * z;
            (0.3 * state) as f32
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE)
}

/// Exponentially decaying noise tail with a unit direct path.
pub fn synth_rir<R: Rng + ?Sized>(rt60: f64, rng: &mut R) -> Result<Waveform> {
    let rate = SAMPLE_RATE as f64;
    let n = ((rt60 * rate).round() as usize).max(2);
    let decay = 6.9 / (rt60 * rate);
    let mut h: Vec<f32> = (0..n)
        .map(|i| {
            let z: f64 = StandardNormal.sample(rng);
            (0.3 * z * (-decay * i as f64).exp()) as f32
        })
        .collect();
    h[0] = 1.0;
    Waveform::new(h, SAMPLE_RATE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub speakers: usize,
    pub utts_per_speaker: usize,
    pub seconds: f64,
    /// Utterances per speaker kept out of training and used for trials.
    pub heldout_per_speaker: usize,
    pub noise_files: usize,
    pub rir_files: usize,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(speakers: usize, utts_per_speaker: usize, seconds: f64, seed: u64) -> Self {
        Self {
            speakers,
            utts_per_speaker,
            seconds,
            heldout_per_speaker: 3.min(utts_per_speaker.saturating_sub(1)).max(1),
            noise_files: 4,
            rir_files: 4,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers < 2 || self.utts_per_speaker < 2 {
            return Err(Error::config("synthetic corpus needs at least 2 speakers and 2 utterances each"));
        }
        if self.heldout_per_speaker == 0 || self.heldout_per_speaker >= self.utts_per_speaker {
            return Err(Error::config("held-out count must leave at least one training utterance"));
        }
        if !(self.seconds > 0.0) {
            return Err(Error::config("utterance duration must be positive"));
        }
        Ok(())
    }
}

/// Paths of a written corpus.
#[derive(Debug, Clone)]
pub struct CorpusLayout {
    pub root: PathBuf,
    /// Every utterance.
    pub manifest: PathBuf,
    /// Training utterances only.
    pub train_manifest: PathBuf,
    /// Held-out utterances (the trial list draws from these).
    pub test_manifest: PathBuf,
    pub trials: PathBuf,
    pub noise_manifest: PathBuf,
    pub rir_manifest: PathBuf,
}

pub fn speaker_id(k: usize) -> String {
    format!("spk{k:03}")
}

pub fn utterance_id(k: usize, u: usize) -> String {
    format!("spk{k:03}-u{u:03}")
}

/// Balanced trial list over held-out utterances: every same-speaker pair
/// as a target, and an equal number of random cross-speaker pairs.
pub fn balanced_trials<R: Rng + ?Sized>(heldout: &[(String, usize)], rng: &mut R) -> Vec<(bool, String, String)> {
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for i in 0..heldout.len() {
        for j in i + 1..heldout.len() {
            let pair = (heldout[i].0.clone(), heldout[j].0.clone());
            if heldout[i].1 == heldout[j].1 {
                targets.push(pair);
            } else {
                nontargets.push(pair);
            }
        }
    }
    rand::seq::SliceRandom::shuffle(&mut nontargets[..], rng);
    nontargets.truncate(targets.len());
    nontargets.sort();
    let mut out: Vec<(bool, String, String)> = targets.into_iter().map(|(a, b)| (true, a, b)).collect();
    out.extend(nontargets.into_iter().map(|(a, b)| (false, a, b)));
    out
}

/// Writes WAVs, manifests, noise/RIR sets and the trial list under `root`.
pub fn write_corpus(spec: &CorpusSpec, root: &Path) -> Result<CorpusLayout> {
    spec.validate()?;
    let streams = SeedStreams::new(spec.seed);
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(&root.join("wav"))?;
    mkdir(&root.join("noise"))?;
    mkdir(&root.join("rir"))?;

    let mut all = String::new();
    let mut train = String::new();
    let mut test = String::new();
    let mut heldout = Vec::new();
    let first_heldout = spec.utts_per_speaker - spec.heldout_per_speaker;
    for k in 0..spec.speakers {
        let voice = SpeakerVoice::generate(k, spec.speakers, &mut streams.indexed("voice", k as u64));
        let spk = speaker_id(k);
        mkdir(&root.join("wav").join(&spk))?;
        for u in 0..spec.utts_per_speaker {
            let utt = utterance_id(k, u);
            let mut rng = streams.indexed("utterance", (k * spec.utts_per_speaker + u) as u64);
            let wave = synth_utterance(&voice, spec.seconds, &mut rng)?;
            let rel = format!("wav/{spk}/{utt}.wav");
            write_wav(&root.join(&rel), &wave, SampleFormat::Pcm16)?;
            let line = format!("{utt}\t{rel}\t{spk}\n");
            all.push_str(&line);
            if u >= first_heldout {
                test.push_str(&line);
                heldout.push((utt, k));
            } else {
                train.push_str(&line);
            }
        }
    }

    let mut noise = String::new();
    for i in 0..spec.noise_files {
        let w = synth_noise(spec.seconds.max(1.0), &mut streams.indexed("noise", i as u64))?;
        let rel = format!("noise/noise{i:02}.wav");
        write_wav(&root.join(&rel), &w, SampleFormat::Float32)?;
        noise.push_str(&format!("noise{i:02}\t{rel}\tnoise\n"));
    }
    let mut rirs = String::new();
    for i in 0..spec.rir_files {
        let mut rng = streams.indexed("rir", i as u64);
        let rt60 = rng.gen_range(0.15..0.6);
        let w = synth_rir(rt60, &mut rng)?;
        let rel = format!("rir/rir{i:02}.wav");
        write_wav(&root.join(&rel), &w, SampleFormat::Float32)?;
        rirs.push_str(&format!("rir{i:02}\t{rel}\trir\n"));
    }

    let trials: String = balanced_trials(&heldout, &mut streams.stream("trials"))
        .into_iter()
        .map(|(t, a, b)| format!("{} {a} {b}\n", u8::from(t)))
        .collect();

    let layout = CorpusLayout {
        root: root.to_path_buf(),
        manifest: root.join("manifest.tsv"),
        train_manifest: root.join("train.tsv"),
        test_manifest: root.join("test.tsv"),
        trials: root.join("trials.txt"),
        noise_manifest: root.join("noise.tsv"),
        rir_manifest: root.join("rir.tsv"),
    };
    for (path, text) in [
        (&layout.manifest, &all),
        (&layout.train_manifest, &train),
        (&layout.test_manifest, &test),
        (&layout.trials, &trials),
        (&layout.noise_manifest, &noise),
        (&layout.rir_manifest, &rirs),
    ] {
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(layout)
}
