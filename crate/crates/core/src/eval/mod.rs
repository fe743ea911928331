//! Trial scoring, EER / MinDCF, and the short-duration test harness.

pub mod archive;
pub mod metrics;
pub mod trials;

use std::collections::HashMap;

use rayon::prelude::*;

use crate::audio::{crop_or_duplicate, Fbank, FbankConfig, Waveform};
use crate::error::{Error, Result};
use crate::model::{ERes2NetV2, Embedding};
use crate::rng::SeedStreams;

pub use archive::{decode_archive, encode_archive, read_archive, write_archive};
pub use metrics::{compute_eer, compute_min_dcf, cosine_score, det_curve, DcfParams, DetPoint, Scored};
pub use trials::{format_scores, parse_trials, parse_trials_str, ScoreRecord, TrialRecord};

/// Scores every trial against `lookup`, in trial order.
pub fn score_trials(trials: &[TrialRecord], lookup: &HashMap<&str, &[f32]>) -> Result<Vec<ScoreRecord>> {
    let find = |id: &str| {
        lookup
            .get(id)
            .copied()
            .ok_or_else(|| Error::Unresolved(format!("trial id {id} has no embedding")))
    };
    trials
        .par_iter()
        .map(|t| {
            let score = cosine_score(find(&t.enroll)?, find(&t.test)?)?;
            Ok(ScoreRecord {
                trial: t.clone(),
                score,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub dcf_threshold: f64,
    pub det: Vec<DetPoint>,
}

impl EvalReport {
    pub fn from_scores(scores: &[ScoreRecord], dcf: &DcfParams) -> Result<Self> {
        let pairs: Vec<Scored> = scores.iter().map(|s| (s.score, s.trial.target)).collect();
        let (eer, eer_threshold) = compute_eer(&pairs)?;
        let (min_dcf, dcf_threshold) = compute_min_dcf(&pairs, dcf)?;
        Ok(Self {
            eer,
            eer_threshold,
            min_dcf,
            dcf_threshold,
            det: det_curve(&pairs)?,
        })
    }

    /// `EER(%) MinDCF threshold`.
    pub fn summary_line(&self) -> String {
        format!("{:.2} {:.3} {:.6}", self.eer * 100.0, self.min_dcf, self.eer_threshold)
    }

    pub fn metrics_csv(&self) -> String {
        format!(
            "metric,value,threshold\neer,{:.6},{:.6}\nmin_dcf,{:.6},{:.6}\n",
            self.eer, self.eer_threshold, self.min_dcf, self.dcf_threshold
        )
    }

    pub fn det_csv(&self) -> String {
        let mut s = String::from("threshold,p_miss,p_fa\n");
        for p in &self.det {
            s.push_str(&format!("{:.6},{:.6},{:.6}\n", p.threshold, p.p_miss, p.p_fa));
        }
        s
    }
}

/// Eval-mode embedding of a waveform.
pub fn embed_waveform(model: &ERes2NetV2, fbank: &Fbank, id: &str, wave: &Waveform) -> Result<Embedding> {
    let feats = fbank.compute(wave)?.mean_normalized();
    model.forward_embed(id, &feats)
}

/// Embeddings of `(id, waveform)` pairs, in input order.
pub fn extract_all(model: &ERes2NetV2, items: &[(String, Waveform)]) -> Result<Vec<Embedding>> {
    let fbank = Fbank::new(FbankConfig::default())?;
    items
        .par_iter()
        .map(|(id, w)| embed_waveform(model, &fbank, id, w))
        .collect()
}

/// Full-length enrollment against test sides cropped to `seconds` (one
/// random crop per trial, drawn from `seed`). `None` scores full test audio.
pub fn truncated_eval(
    model: &ERes2NetV2,
    audio: &HashMap<String, Waveform>,
    trials: &[TrialRecord],
    seconds: Option<f64>,
    seed: u64,
    dcf: &DcfParams,
) -> Result<(Vec<ScoreRecord>, EvalReport)> {
    let fbank = Fbank::new(FbankConfig::default())?;
    let wave = |id: &str| {
        audio
            .get(id)
            .ok_or_else(|| Error::Unresolved(format!("trial id {id} has no audio")))
    };
    let mut ids: Vec<&str> = trials.iter().map(|t| t.enroll.as_str()).collect();
    if seconds.is_none() {
        ids.extend(trials.iter().map(|t| t.test.as_str()));
    }
    ids.sort_unstable();
    ids.dedup();
    let full: Vec<Embedding> = ids
        .par_iter()
        .map(|id| embed_waveform(model, &fbank, id, wave(id)?))
        .collect::<Result<_>>()?;
    let full = archive::index(&full);
    let scores = match seconds {
        None => score_trials(trials, &full)?,
        Some(s) => {
            let target = (s * fbank.config().sample_rate as f64).round() as usize;
            let streams = SeedStreams::new(seed);
            trials
                .par_iter()
                .enumerate()
                .map(|(i, t)| {
                    let mut rng = streams.indexed("test-crop", i as u64);
                    let cropped = crop_or_duplicate(wave(&t.test)?, target, &mut rng)?;
                    let e = embed_waveform(model, &fbank, &t.test, &cropped)?;
                    let enroll = full.get(t.enroll.as_str()).expect("enroll ids embedded");
                    Ok(ScoreRecord {
                        trial: t.clone(),
                        score: cosine_score(enroll, &e.vector)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let report = EvalReport::from_scores(&scores, dcf)?;
    Ok((scores, report))
}
