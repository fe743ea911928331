//! Analytic parameter and FLOP counting.
//!
//! Counts are derived from the config alone, layer by layer, in the same
//! order the network executes them.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::tensor::conv::conv_out_extent;

/// How a multiply-accumulate is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopConvention {
    /// One per multiply-accumulate; element-wise ops count once per element.
    Mac,
    /// Multiply and add counted separately (factor 2 throughout).
    MulAdd,
}

impl FlopConvention {
    fn factor(self) -> u64 {
        match self {
            FlopConvention::Mac => 1,
            FlopConvention::MulAdd => 2,
        }
    }
}

impl fmt::Display for FlopConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlopConvention::Mac => "mac",
            FlopConvention::MulAdd => "muladd",
        })
    }
}

impl FromStr for FlopConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mac" => Ok(FlopConvention::Mac),
            "muladd" => Ok(FlopConvention::MulAdd),
            _ => Err(Error::config(format!("unknown FLOP convention {s:?} (mac|muladd)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub layer: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub frames: usize,
    pub feat_dim: usize,
    pub convention: FlopConvention,
    pub params: u64,
    pub flops: u64,
    pub rows: Vec<CostRow>,
}

impl CostReport {
    /// `layer,params,flops` rows followed by a `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,params,flops\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.layer, r.params, r.flops));
        }
        s.push_str(&format!("total,{},{}\n", self.params, self.flops));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Counter {
    k: u64,
    rows: Vec<CostRow>,
}

impl Counter {
    fn row(&mut self, layer: String, params: u64, flops: u64) {
        self.rows.push(CostRow { layer, params, flops });
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, bias: bool, fo: usize, to: usize) {
        let params = (cout * cin * kernel * kernel + if bias { cout } else { 0 }) as u64;
        let flops = self.k * (fo * to * cout * cin * kernel * kernel) as u64;
        self.row(name.to_string(), params, flops);
    }

    fn bn(&mut self, name: &str, c: usize, elems: usize) {
        self.row(name.to_string(), 2 * c as u64, self.k * elems as u64);
    }

    fn elementwise(&mut self, name: &str, elems: usize) {
        self.row(name.to_string(), 0, self.k * elems as u64);
    }

    fn aff(&mut self, name: &str, c: usize, r: usize, positions: usize) {
        let m = c / r;
        self.conv(&format!("{name}.conv1"), 2 * c, m, 1, true, positions, 1);
        self.bn(&format!("{name}.bn1"), m, m * positions);
        self.elementwise(&format!("{name}.silu"), m * positions);
        self.conv(&format!("{name}.conv2"), m, c, 1, true, positions, 1);
        self.bn(&format!("{name}.bn2"), c, c * positions);
        self.elementwise(&format!("{name}.tanh"), c * positions);
        self.elementwise(&format!("{name}.combine"), 3 * c * positions);
    }
}

fn walk(cfg: &ModelConfig, frames: usize, convention: FlopConvention) -> Result<CostReport> {
    cfg.validate()?;
    let extents = cfg.stage_extents(frames).ok_or_else(|| {
        Error::invalid(format!("{frames} frames do not survive the stage strides"))
    })?;
    let mut c = Counter {
        k: convention.factor(),
        rows: Vec::new(),
    };
    let (f0, t0) = (cfg.feat_dim, frames);
    let p0 = f0 * t0;
    c.conv("stem.conv", 1, cfg.base_channels, 3, false, f0, t0);
    c.bn("stem.bn", cfg.base_channels, cfg.base_channels * p0);
    c.elementwise("stem.relu", cfg.base_channels * p0);

    let (mut f, mut t) = (f0, t0);
    for plan in cfg.blocks() {
        let name = format!("stage{}.{}", plan.stage, plan.index);
        let fo = conv_out_extent(f, 1, plan.stride, 0).expect("extent checked");
        let to = conv_out_extent(t, 1, plan.stride, 0).expect("extent checked");
        let pos = fo * to;
        let (w, s) = (plan.width, cfg.scale);
        c.conv(&format!("{name}.conv1"), plan.in_channels, w * s, 1, false, fo, to);
        c.bn(&format!("{name}.bn1"), w * s, w * s * pos);
        c.elementwise(&format!("{name}.relu1"), w * s * pos);
        for i in 0..s {
            if i > 0 {
                if plan.local_aff {
                    c.aff(&format!("{name}.fuse.{}", i - 1), w, cfg.reduction_ratio, pos);
                } else {
                    c.elementwise(&format!("{name}.add.{i}"), w * pos);
                }
            }
            c.conv(&format!("{name}.convs.{i}"), w, w, 3, false, fo, to);
            c.bn(&format!("{name}.bns.{i}"), w, w * pos);
            c.elementwise(&format!("{name}.relus.{i}"), w * pos);
        }
        let out = plan.out_channels;
        c.conv(&format!("{name}.conv3"), w * s, out, 1, false, fo, to);
        c.bn(&format!("{name}.bn3"), out, out * pos);
        if plan.has_projection() {
            c.conv(&format!("{name}.shortcut.conv"), plan.in_channels, out, 1, false, fo, to);
            c.bn(&format!("{name}.shortcut.bn"), out, out * pos);
        }
        c.elementwise(&format!("{name}.residual"), out * pos);
        c.elementwise(&format!("{name}.relu"), out * pos);
        (f, t) = (fo, to);
    }

    for &(from, to_stage) in cfg.fusion_pairs() {
        let name = format!("fuse{from}{to_stage}");
        let (fo, to) = extents[to_stage - 1];
        let cin = cfg.stage_out_channels(from);
        let cout = cfg.stage_out_channels(to_stage);
        c.conv(&format!("{name}.down"), cin, 2 * cin, 3, false, fo, to);
        c.bn(&format!("{name}.down_bn"), 2 * cin, 2 * cin * fo * to);
        c.aff(&format!("{name}.aff"), cout, cfg.reduction_ratio, fo * to);
    }

    let (f4, t4) = extents[3];
    let c4 = cfg.stage_out_channels(4);
    c.elementwise("pool", 2 * c4 * f4 * t4);
    let pooled = cfg.pooled_dim();
    let k = c.k;
    c.row(
        "embed".into(),
        (pooled * cfg.embedding_dim + cfg.embedding_dim) as u64,
        k * (pooled * cfg.embedding_dim) as u64,
    );

    Ok(CostReport {
        frames,
        feat_dim: cfg.feat_dim,
        convention,
        params: c.rows.iter().map(|r| r.params).sum(),
        flops: c.rows.iter().map(|r| r.flops).sum(),
        rows: c.rows,
    })
}

/// Full per-layer report for a `feat_dim × frames` input.
pub fn profile(cfg: &ModelConfig, frames: usize, convention: FlopConvention) -> Result<CostReport> {
    walk(cfg, frames, convention)
}

/// Learnable scalars of the embedding network (classifier head excluded).
pub fn count_params(cfg: &ModelConfig) -> Result<u64> {
    let frames = cfg.min_frames();
    Ok(walk(cfg, frames, FlopConvention::Mac)?.params)
}

pub fn count_flops(cfg: &ModelConfig, frames: usize, convention: FlopConvention) -> Result<u64> {
    Ok(walk(cfg, frames, convention)?.flops)
}

/// Parameters of an AAM classifier over `num_classes` speakers.
pub fn head_params(cfg: &ModelConfig, num_classes: usize) -> u64 {
    (num_classes * cfg.embedding_dim) as u64
}

/// Relative reduction of `variant` with respect to `base`, in percent.
pub fn reduction_pct(base: f64, variant: f64) -> f64 {
    (base - variant) / base * 100.0
}

/// `(param_delta_pct, flop_delta_pct)` of `variant` relative to `base`.
pub fn reduction_check(base: &CostReport, variant: &CostReport) -> Result<(f64, f64)> {
    if (base.frames, base.feat_dim, base.convention) != (variant.frames, variant.feat_dim, variant.convention) {
        return Err(Error::invalid("reports were computed for different inputs or conventions"));
    }
    Ok((
        reduction_pct(base.params as f64, variant.params as f64),
        reduction_pct(base.flops as f64, variant.flops as f64),
    ))
}
