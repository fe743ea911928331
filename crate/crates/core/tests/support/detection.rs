//! Brute-force detection metrics: every threshold is evaluated by counting
//! all trials directly.

use eres2net::eval::{DcfParams, Scored};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Rates at threshold `t`, counted directly over all trials.
pub fn rates(scores: &[Scored], t: f64) -> (f64, f64) {
    let tar = scores.iter().filter(|s| s.1).count() as f64;
    let non = scores.len() as f64 - tar;
    let miss = scores.iter().filter(|s| s.1 && s.0 < t).count() as f64;
    let fa = scores.iter().filter(|s| !s.1 && s.0 >= t).count() as f64;
    (miss / tar, fa / non)
}

pub fn thresholds(scores: &[Scored]) -> Vec<f64> {
    let mut t: Vec<f64> = scores.iter().map(|s| s.0).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t.push(f64::INFINITY);
    t
}

pub fn brute_eer(scores: &[Scored]) -> f64 {
    let pts: Vec<(f64, f64)> = thresholds(scores).into_iter().map(|t| rates(scores, t)).collect();
    for k in 0..pts.len() {
        let d = pts[k].0 - pts[k].1;
        if d >= 0.0 {
            if k == 0 {
                return (pts[0].0 + pts[0].1) / 2.0;
            }
            let dp = pts[k - 1].0 - pts[k - 1].1;
            let w = if d == dp { 0.0 } else { -dp / (d - dp) };
            return pts[k - 1].0 + w * (pts[k].0 - pts[k - 1].0);
        }
    }
    unreachable!()
}

pub fn brute_min_dcf(scores: &[Scored], p: &DcfParams) -> f64 {
    let norm = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
    thresholds(scores)
        .into_iter()
        .map(|t| {
            let (m, f) = rates(scores, t);
            (p.c_miss * m * p.p_target + p.c_fa * f * (1.0 - p.p_target)) / norm
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn random_set(r: &mut ChaCha8Rng, n: usize, quantize: bool) -> Vec<Scored> {
    let mut out: Vec<Scored> = (0..n)
        .map(|_| {
            let target = r.gen_bool(0.3);
            let s: f64 = r.gen_range(-1.0..1.0) + if target { 0.6 } else { 0.0 };
            (if quantize { (s * 10.0).round() / 10.0 } else { s }, target)
        })
        .collect();
    out[0].1 = true;
    out[1].1 = false;
    out
}
