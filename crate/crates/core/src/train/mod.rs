//! AAM-softmax training at desk scale.

pub mod aam;
pub mod optim;

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::audio::{crop_or_duplicate, speed_perturb, AugmentProfile, Fbank, FbankConfig, FeatureMatrix, ManifestEntry, Waveform};
use crate::error::{Error, Result};
use crate::model::network::features_to_input;
use crate::model::{state_dict, ERes2NetV2, Mode};
use crate::tensor::checkpoint::Checkpoint;
use crate::rng::SeedStreams;

pub use aam::{aam_logits, aam_softmax_loss, cosine_logits, margin_cos, AamConfig, AamHead};
pub use optim::{lr_at, sgd_step, OptimState};

/// Labelled training waveforms with contiguous labels `0..num_classes`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<(Waveform, usize)>,
    pub num_classes: usize,
    /// Speaker id of each base label.
    pub speakers: Vec<String>,
}

impl Dataset {
    pub fn new(items: Vec<(Waveform, usize)>, speakers: Vec<String>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("training dataset is empty"));
        }
        let num_classes = speakers.len();
        if let Some((_, y)) = items.iter().find(|(_, y)| *y >= num_classes) {
            return Err(Error::invalid(format!("label {y} out of range for {num_classes} speakers")));
        }
        Ok(Self {
            items,
            num_classes,
            speakers,
        })
    }

    /// Loads every manifest entry; speakers are labelled in sorted id order.
    pub fn from_manifest(entries: &[ManifestEntry]) -> Result<Self> {
        let mut labels = BTreeMap::new();
        for e in entries {
            labels.entry(e.speaker_id.clone()).or_insert(0usize);
        }
        for (i, v) in labels.values_mut().enumerate() {
            *v = i;
        }
        let items = entries
            .iter()
            .map(|e| Ok((crate::audio::load_wav(&e.path)?, labels[&e.speaker_id])))
            .collect::<Result<Vec<_>>>()?;
        Self::new(items, labels.into_keys().collect())
    }

    /// Adds 0.9× and 1.1× copies as new classes `y + K` and `y + 2K`.
    pub fn with_speed_perturbation(&self) -> Result<Self> {
        let k = self.num_classes;
        let mut items = Vec::with_capacity(self.items.len() * 3);
        for &(factor, _) in &crate::audio::augment::SPEED_FACTORS {
            for (w, y) in &self.items {
                let (w, offset) = speed_perturb(w, factor)?;
                items.push((w, y + k * offset));
            }
        }
        Ok(Self {
            items,
            num_classes: 3 * k,
            speakers: self.speakers.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub crop_secs: f64,
    pub augment: Option<AugmentProfile>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            batch_size: 32,
            epochs: 30,
            crop_secs: 3.0,
            augment: None,
            seed,
        }
    }
}

/// Large-margin fine-tuning: raised margin, longer crops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeMargin {
    pub margin: f64,
    pub crop_secs: f64,
}

impl Default for LargeMargin {
    fn default() -> Self {
        Self {
            margin: 0.5,
            crop_secs: 6.0,
        }
    }
}

impl LargeMargin {
    pub fn apply(&self, train: &mut TrainConfig, aam: &mut AamConfig) {
        train.crop_secs = self.crop_secs;
        aam.margin = self.margin;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepLog>,
}

impl TrainHistory {
    /// Mean loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for s in &self.steps {
            let e = sums.entry(s.epoch).or_default();
            e.0 += s.loss as f64;
            e.1 += 1;
        }
        sums.values().map(|(s, n)| s / *n as f64).collect()
    }

    /// `step,lr,loss` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,loss\n");
        for l in &self.steps {
            s.push_str(&format!("{},{:.9},{:.6}\n", l.step, l.lr, l.loss));
        }
        s
    }
}

/// Everything mutated by training.
pub struct Trainer {
    pub model: ERes2NetV2,
    pub head: AamHead,
    pub opt: OptimState,
    pub aam: AamConfig,
    pub step: usize,
}

/// Mean-normalized fbank of a randomly cropped (and optionally augmented)
/// training segment.
pub fn training_features(
    wave: &Waveform,
    crop_samples: usize,
    augment: Option<&AugmentProfile>,
    fbank: &Fbank,
    rng: &mut crate::rng::StreamRng,
) -> Result<FeatureMatrix> {
    let mut seg = crop_or_duplicate(wave, crop_samples, rng)?;
    if let Some(profile) = augment {
        seg = profile.apply(&seg, rng)?;
    }
    Ok(fbank.compute(&seg)?.mean_normalized())
}

impl Trainer {
    pub fn new(model: ERes2NetV2, head: AamHead, opt: OptimState, aam: AamConfig) -> Result<Self> {
        aam.validate()?;
        if head.num_classes() != aam.num_classes {
            return Err(Error::config(format!(
                "classifier has {} classes but the loss expects {}",
                head.num_classes(),
                aam.num_classes
            )));
        }
        Ok(Self {
            model,
            head,
            opt,
            aam,
            step: 0,
        })
    }

    /// Runs `cfg.epochs` epochs. `on_epoch(epoch, trainer)` is called after
    /// each epoch (checkpointing, logging).
    pub fn train_epochs(
        &mut self,
        data: &Dataset,
        cfg: &TrainConfig,
        on_epoch: &mut dyn FnMut(usize, &Trainer) -> Result<()>,
    ) -> Result<TrainHistory> {
        if data.items.is_empty() {
            return Err(Error::invalid("training dataset is empty"));
        }
        if data.num_classes != self.aam.num_classes {
            return Err(Error::config(format!(
                "dataset has {} classes, classifier has {}",
                data.num_classes, self.aam.num_classes
            )));
        }
        let steps_per_epoch = data.items.len() / cfg.batch_size.max(1);
        if cfg.batch_size == 0 || steps_per_epoch == 0 {
            return Err(Error::invalid(format!(
                "{} items do not fill one batch of {}",
                data.items.len(),
                cfg.batch_size
            )));
        }
        let fbank = Fbank::new(FbankConfig::default())?;
        let crop = (cfg.crop_secs * fbank.config().sample_rate as f64).round() as usize;
        let streams = SeedStreams::new(cfg.seed);
        let mut history = TrainHistory::default();
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..data.items.len()).collect();
            rand::seq::SliceRandom::shuffle(&mut order[..], &mut streams.indexed("shuffle", epoch as u64));
            for batch in order.chunks_exact(cfg.batch_size) {
                let step = self.step;
                let feats = batch
                    .par_iter()
                    .enumerate()
                    .map(|(j, &idx)| {
                        let mut rng = streams.indexed("segment", (step * cfg.batch_size + j) as u64);
                        training_features(&data.items[idx].0, crop, cfg.augment.as_ref(), &fbank, &mut rng)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let labels: Vec<usize> = batch.iter().map(|&i| data.items[i].1).collect();
                let x = features_to_input(&feats)?;
                let emb = self.model.forward(&x, Mode::Train)?;
                let loss = aam_softmax_loss(&emb, &labels, &self.head.weight, &self.aam)?;
                let value = loss.item()?;
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("loss became {value} at step {step}")));
                }
                loss.backward()?;
                let lr = lr_at(step, steps_per_epoch, &self.opt);
                sgd_step(&mut [("", &mut self.model), ("head", &mut self.head)], &mut self.opt, lr)?;
                history.steps.push(StepLog {
                    step,
                    epoch,
                    lr,
                    loss: value,
                });
                self.step += 1;
            }
            on_epoch(epoch, self)?;
        }
        Ok(history)
    }

    /// Model parameters and buffers, followed by the classifier under `head.`.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = state_dict(&self.model, "");
        ck.tensors.extend(state_dict(&self.head, "head").tensors);
        ck
    }
}
