//! Declarative model hyperparameters and their `key = value` file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::conv::conv_out_extent;

/// Which global/local fusion design to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Bottleneck-like local fusion and dual-stage (3→4) global fusion.
    V2,
    /// Dual-stage global fusion, full split width in the blocks.
    V2NoBl,
    /// Cascade global fusion (1→2, 2→3, 3→4), full split width.
    V2NoBlBd,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::V2, Variant::V2NoBl, Variant::V2NoBlBd];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::V2 => "v2",
            Variant::V2NoBl => "v2_no_bl",
            Variant::V2NoBlBd => "v2_no_bl_bd",
        }
    }

    /// Split width per 64 planes used when a config omits `base_width`.
    pub fn default_base_width(self) -> usize {
        match self {
            Variant::V2 => 26,
            Variant::V2NoBl | Variant::V2NoBlBd => 32,
        }
    }

    pub fn cascade_fusion(self) -> bool {
        self == Variant::V2NoBlBd
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

/// Stages with hierarchical AFF fusion inside their blocks (1-based); the
/// earlier stages combine splits by plain addition.
pub const LOCAL_FUSION_STAGES: [usize; 2] = [3, 4];

pub const EMBEDDING_DIM: usize = 192;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Stem width; stage `j` has `base_channels · 2^(j-1)` planes.
    pub base_channels: usize,
    /// Split width is `floor(planes · base_width / 64)`.
    pub base_width: usize,
    pub block_counts: [usize; 4],
    pub stage_strides: [usize; 4],
    pub scale: usize,
    pub expansion: usize,
    pub reduction_ratio: usize,
    pub embedding_dim: usize,
    pub feat_dim: usize,
}

/// Geometry of one block, derived from the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPlan {
    pub stage: usize,
    pub index: usize,
    pub in_channels: usize,
    pub planes: usize,
    pub width: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub local_aff: bool,
}

impl BlockPlan {
    pub fn has_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }
}

const PRESET_V2: &str = include_str!("../../../../configs/eres2netv2.conf");
const PRESET_V2_NO_BL: &str = include_str!("../../../../configs/eres2netv2_no_bl.conf");
const PRESET_V2_NO_BL_BD: &str = include_str!("../../../../configs/eres2netv2_no_bl_bd.conf");
const PRESET_BASELINE: &str = include_str!("../../../../configs/eres2net_baseline.conf");
const PRESET_TOY: &str = include_str!("../../../../configs/toy.conf");

impl ModelConfig {
    /// Built-in configs: `v2`, `v2_no_bl`, `v2_no_bl_bd`, `eres2net`, `toy`.
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "v2" => PRESET_V2,
            "v2_no_bl" => PRESET_V2_NO_BL,
            "v2_no_bl_bd" => PRESET_V2_NO_BL_BD,
            "eres2net" => PRESET_BASELINE,
            "toy" => PRESET_TOY,
            _ => return Err(Error::config(format!("unknown preset {name:?}"))),
        };
        text.parse()
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["v2", "v2_no_bl", "v2_no_bl_bd", "eres2net", "toy"]
    }

    /// Loads a config file, or a preset when `path` is `preset:<name>`.
    pub fn load(path: &Path) -> Result<Self> {
        if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("preset:")) {
            return Self::preset(name);
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        text.parse()
            .map_err(|e: Error| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn stage_planes(&self, stage: usize) -> usize {
        self.base_channels << (stage - 1)
    }

    pub fn stage_out_channels(&self, stage: usize) -> usize {
        self.stage_planes(stage) * self.expansion
    }

    pub fn split_width(&self, stage: usize) -> usize {
        self.stage_planes(stage) * self.base_width / 64
    }

    pub fn blocks(&self) -> Vec<BlockPlan> {
        let mut plans = Vec::new();
        let mut in_channels = self.base_channels;
        for stage in 1..=4 {
            for index in 0..self.block_counts[stage - 1] {
                let planes = self.stage_planes(stage);
                let out_channels = planes * self.expansion;
                plans.push(BlockPlan {
                    stage,
                    index,
                    in_channels,
                    planes,
                    width: self.split_width(stage),
                    out_channels,
                    stride: if index == 0 { self.stage_strides[stage - 1] } else { 1 },
                    local_aff: LOCAL_FUSION_STAGES.contains(&stage),
                });
                in_channels = out_channels;
            }
        }
        plans
    }

    /// Global fusion steps as `(from_stage, to_stage)`.
    pub fn fusion_pairs(&self) -> &'static [(usize, usize)] {
        if self.variant.cascade_fusion() {
            &[(1, 2), (2, 3), (3, 4)]
        } else {
            &[(3, 4)]
        }
    }

    /// `(frequency, time)` extent after the stem and each stage.
    pub fn stage_extents(&self, frames: usize) -> Option<[(usize, usize); 4]> {
        let (mut f, mut t) = (self.feat_dim, frames);
        let mut out = [(0, 0); 4];
        for (s, &stride) in self.stage_strides.iter().enumerate() {
            f = conv_out_extent(f, 1, stride, 0)?;
            t = conv_out_extent(t, 1, stride, 0)?;
            out[s] = (f, t);
        }
        Some(out)
    }

    pub fn pooled_dim(&self) -> usize {
        let f4 = self.stage_extents(1).map_or(0, |e| e[3].0);
        2 * self.stage_out_channels(4) * f4
    }

    /// Fewest input frames for which the last stage keeps at least two
    /// time steps to pool over.
    pub fn min_frames(&self) -> usize {
        (1..)
            .find(|&t| self.stage_extents(t).is_some_and(|e| e[3].1 >= 2))
            .expect("strides are finite")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.scale < 2 {
            return bad(format!("scale must be at least 2, got {}", self.scale));
        }
        if self.base_channels == 0 || self.base_width == 0 || self.expansion == 0 || self.reduction_ratio == 0 {
            return bad("base_channels, base_width, expansion and reduction_ratio must be positive".into());
        }
        if self.block_counts.iter().any(|&n| n == 0) {
            return bad(format!("every stage needs a block, got {:?}", self.block_counts));
        }
        if self.stage_strides.iter().any(|&s| s == 0) {
            return bad(format!("strides must be positive, got {:?}", self.stage_strides));
        }
        if self.embedding_dim != EMBEDDING_DIM {
            return bad(format!("embedding_dim must be {EMBEDDING_DIM}, got {}", self.embedding_dim));
        }
        if self.feat_dim == 0 {
            return bad("feat_dim must be positive".into());
        }
        for plan in self.blocks() {
            if plan.width == 0 {
                return bad(format!("stage {} split width rounds to zero", plan.stage));
            }
            if plan.local_aff && plan.width % self.reduction_ratio != 0 {
                return bad(format!(
                    "stage {} split width {} not divisible by reduction ratio {}",
                    plan.stage, plan.width, self.reduction_ratio
                ));
            }
        }
        for &(from, to) in self.fusion_pairs() {
            if self.stage_strides[to - 1] != 2 {
                return bad(format!(
                    "global fusion {from}->{to} needs stage {to} stride 2, got {}",
                    self.stage_strides[to - 1]
                ));
            }
            let c = self.stage_out_channels(to);
            if c % self.reduction_ratio != 0 {
                return bad(format!("fusion channels {c} not divisible by reduction ratio"));
            }
        }
        Ok(())
    }

    fn field_lines(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[usize; 4]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        vec![
            ("variant", self.variant.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("base_width", self.base_width.to_string()),
            ("block_counts", list(&self.block_counts)),
            ("stage_strides", list(&self.stage_strides)),
            ("scale", self.scale.to_string()),
            ("expansion", self.expansion.to_string()),
            ("reduction_ratio", self.reduction_ratio.to_string()),
            ("embedding_dim", self.embedding_dim.to_string()),
            ("feat_dim", self.feat_dim.to_string()),
        ]
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.field_lines() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::config(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn parse_four(key: &str, v: &str) -> Result<[usize; 4]> {
    let items: Vec<usize> = v
        .split(',')
        .map(|s| parse_usize(key, s))
        .collect::<Result<_>>()?;
    items
        .try_into()
        .map_err(|_| Error::config(format!("{key}: expected exactly 4 comma-separated values")))
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut variant = None;
        let mut base_channels = None;
        let mut base_width = None;
        let mut block_counts = None;
        let mut stage_strides = None;
        let mut scale = None;
        let mut expansion = None;
        let mut reduction_ratio = None;
        let mut embedding_dim = None;
        let mut feat_dim = None;
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.contains(&k.to_string()) {
                return Err(Error::config(format!("line {}: duplicate key {k}", n + 1)));
            }
            seen.push(k.to_string());
            match k {
                "variant" => variant = Some(v.parse()?),
                "base_channels" => base_channels = Some(parse_usize(k, v)?),
                "base_width" => base_width = Some(parse_usize(k, v)?),
                "block_counts" => block_counts = Some(parse_four(k, v)?),
                "stage_strides" => stage_strides = Some(parse_four(k, v)?),
                "scale" => scale = Some(parse_usize(k, v)?),
                "expansion" => expansion = Some(parse_usize(k, v)?),
                "reduction_ratio" => reduction_ratio = Some(parse_usize(k, v)?),
                "embedding_dim" => embedding_dim = Some(parse_usize(k, v)?),
                "feat_dim" => feat_dim = Some(parse_usize(k, v)?),
                other => return Err(Error::config(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }
        let missing = |k: &str| Error::config(format!("missing key {k}"));
        let variant: Variant = variant.ok_or_else(|| missing("variant"))?;
        let cfg = ModelConfig {
            variant,
            base_channels: base_channels.ok_or_else(|| missing("base_channels"))?,
            base_width: base_width.unwrap_or_else(|| variant.default_base_width()),
            block_counts: block_counts.ok_or_else(|| missing("block_counts"))?,
            stage_strides: stage_strides.ok_or_else(|| missing("stage_strides"))?,
            scale: scale.ok_or_else(|| missing("scale"))?,
            expansion: expansion.ok_or_else(|| missing("expansion"))?,
            reduction_ratio: reduction_ratio.ok_or_else(|| missing("reduction_ratio"))?,
            embedding_dim: embedding_dim.ok_or_else(|| missing("embedding_dim"))?,
            feat_dim: feat_dim.unwrap_or(crate::audio::fbank::NUM_MEL_BINS),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
