//! Cosine scoring, EER and MinDCF over a threshold sweep.
//!
//! A trial is accepted iff `score ≥ t`. The sweep visits every distinct
//! score plus `+∞` (accept nothing), so miss and false-alarm rates are exact
//! step functions of the threshold.

use crate::error::{Error, Result};

pub fn cosine_score(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine", &[a.len()], &[b.len()]));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine score of a zero vector"));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) || !(self.c_miss > 0.0) || !(self.c_fa > 0.0) {
            return Err(Error::invalid(format!("invalid DCF parameters {self:?}")));
        }
        Ok(())
    }
}

/// One point of the miss/false-alarm trade-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

/// `(score, is_target)` pairs as the input to every metric.
pub type Scored = (f64, bool);

/// Miss and false-alarm rates at every sweep threshold, ascending; the last
/// point is `+∞`.
pub fn det_curve(scores: &[Scored]) -> Result<Vec<DetPoint>> {
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let n_tar = scores.iter().filter(|(_, t)| *t).count();
    let n_non = scores.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        return Err(Error::invalid(format!(
            "need both target and nontarget trials, got {n_tar} and {n_non}"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = Vec::new();
    // Below the i-th distinct score everything earlier is rejected.
    let (mut tar_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        points.push(DetPoint {
            threshold: t,
            p_miss: tar_below as f64 / n_tar as f64,
            p_fa: (n_non - non_below) as f64 / n_non as f64,
        });
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tar_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        p_miss: 1.0,
        p_fa: 0.0,
    });
    Ok(points)
}

/// Equal error rate and its threshold. Between the two sweep points where
/// `p_miss − p_fa` changes sign, both rates are linearly interpolated and
/// the crossing value is returned.
pub fn compute_eer(scores: &[Scored]) -> Result<(f64, f64)> {
    let det = det_curve(scores)?;
    let k = det
        .iter()
        .position(|p| p.p_miss - p.p_fa >= 0.0)
        .expect("the +inf point has p_miss - p_fa = 1");
    let hi = det[k];
    if k == 0 {
        return Ok(((hi.p_miss + hi.p_fa) / 2.0, hi.threshold));
    }
    let lo = det[k - 1];
    let d_lo = lo.p_miss - lo.p_fa;
    let d_hi = hi.p_miss - hi.p_fa;
    let w = if d_hi == d_lo { 0.0 } else { -d_lo / (d_hi - d_lo) };
    let eer = lo.p_miss + w * (hi.p_miss - lo.p_miss);
    let threshold = if hi.threshold.is_finite() {
        lo.threshold + w * (hi.threshold - lo.threshold)
    } else {
        lo.threshold
    };
    Ok((eer, threshold))
}

/// Minimum normalized detection cost and the threshold achieving it.
/// Returns `+∞` as the threshold when rejecting everything is optimal.
pub fn compute_min_dcf(scores: &[Scored], p: &DcfParams) -> Result<(f64, f64)> {
    p.validate()?;
    let det = det_curve(scores)?;
    let norm = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
    let mut best = (f64::INFINITY, f64::INFINITY);
    for pt in &det {
        let c = (p.c_miss * pt.p_miss * p.p_target + p.c_fa * pt.p_fa * (1.0 - p.p_target)) / norm;
        if c < best.0 {
            best = (c, pt.threshold);
        }
    }
    Ok(best)
}
