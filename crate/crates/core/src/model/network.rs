//! Full network assembly and the global fusion stage.

use rand::Rng;

use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::{BatchNorm, Conv2d, Linear, Tensor};

use super::aff::Aff;
use super::block::BlffBlock;
use super::config::ModelConfig;
use super::params::{join, Module, Slot, SlotMut};
use super::{Embedding, Mode, StageFeatureMap};

/// One global fusion step: `aff(D(S_from), S_to)` with `D` a 3×3 stride-2
/// channel-doubling convolution followed by BN.
#[derive(Debug, Clone)]
pub struct FusionStep {
    pub from: usize,
    pub to: usize,
    pub down: Conv2d,
    pub down_bn: BatchNorm,
    pub aff: Aff,
}

impl FusionStep {
    fn new<R: Rng + ?Sized>(cfg: &ModelConfig, from: usize, to: usize, rng: &mut R) -> Result<Self> {
        let c_from = cfg.stage_out_channels(from);
        let c_to = cfg.stage_out_channels(to);
        Ok(Self {
            from,
            to,
            down: Conv2d::new(c_from, 2 * c_from, 3, 2, 1, false, rng)?,
            down_bn: BatchNorm::new(2 * c_from),
            aff: Aff::new(c_to, cfg.reduction_ratio, rng)?,
        })
    }

    pub fn downsample(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.down_bn.forward(&self.down.forward(x)?, mode.training())
    }

    /// Fuses the (already fused) shallower map into the deeper one.
    pub fn fuse(&self, shallow: &Tensor, deep: &Tensor, mode: Mode) -> Result<Tensor> {
        let d = self.downsample(shallow, mode)?;
        if d.shape() != deep.shape() {
            return Err(Error::shape("global fusion", d.shape(), deep.shape()));
        }
        self.aff.fuse(&d, deep, mode)
    }

    fn prefix(&self) -> String {
        format!("fuse{}{}", self.from, self.to)
    }
}

impl Module for FusionStep {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.down.visit(&join(prefix, "down"), f);
        self.down_bn.visit(&join(prefix, "down_bn"), f);
        self.aff.visit(&join(prefix, "aff"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        self.down.visit_mut(&join(prefix, "down"), f);
        self.down_bn.visit_mut(&join(prefix, "down_bn"), f);
        self.aff.visit_mut(&join(prefix, "aff"), f);
    }
}

#[derive(Debug, Clone)]
pub enum GlobalFusion {
    /// Stage 3 → 4 only.
    DualStage(FusionStep),
    /// Stages 1 → 2 → 3 → 4.
    Cascade(Vec<FusionStep>),
}

impl GlobalFusion {
    pub fn steps(&self) -> &[FusionStep] {
        match self {
            GlobalFusion::DualStage(s) => std::slice::from_ref(s),
            GlobalFusion::Cascade(v) => v,
        }
    }

    fn steps_mut(&mut self) -> &mut [FusionStep] {
        match self {
            GlobalFusion::DualStage(s) => std::slice::from_mut(s),
            GlobalFusion::Cascade(v) => v,
        }
    }

    /// Number of AFF modules outside the blocks.
    pub fn aff_count(&self) -> usize {
        self.steps().len()
    }
}

/// Intermediate maps of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub stages: Vec<StageFeatureMap>,
    pub fused: Tensor,
    pub pooled: Tensor,
    pub embedding: Tensor,
}

#[derive(Debug, Clone)]
pub struct ERes2NetV2 {
    config: ModelConfig,
    pub stem: Conv2d,
    pub stem_bn: BatchNorm,
    pub stages: Vec<Vec<BlffBlock>>,
    pub fusion: GlobalFusion,
    pub embed: Linear,
}

impl ERes2NetV2 {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stem = Conv2d::new(1, config.base_channels, 3, 1, 1, false, rng)?;
        let mut stages: Vec<Vec<BlffBlock>> = vec![Vec::new(); 4];
        for plan in config.blocks() {
            stages[plan.stage - 1].push(BlffBlock::new(plan, config.scale, config.reduction_ratio, rng)?);
        }
        let steps = config
            .fusion_pairs()
            .iter()
            .map(|&(a, b)| FusionStep::new(config, a, b, rng))
            .collect::<Result<Vec<_>>>()?;
        let fusion = if config.variant.cascade_fusion() {
            GlobalFusion::Cascade(steps)
        } else {
            GlobalFusion::DualStage(steps.into_iter().next().expect("one fusion step"))
        };
        Ok(Self {
            config: config.clone(),
            stem,
            stem_bn: BatchNorm::new(config.base_channels),
            stages,
            fusion,
            embed: Linear::new(config.pooled_dim(), config.embedding_dim, true, rng)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Stem plus the four stages on `x: (B, 1, F, T)`.
    pub fn forward_stages(&self, x: &Tensor, mode: Mode) -> Result<Vec<StageFeatureMap>> {
        if x.rank() != 4 || x.shape()[1] != 1 || x.shape()[2] != self.config.feat_dim {
            return Err(Error::shape("model input", x.shape(), &[0, 1, self.config.feat_dim, 0]));
        }
        let frames = x.shape()[3];
        let min = self.config.min_frames();
        if frames < min {
            return Err(Error::invalid(format!(
                "input has {frames} frames; the network needs at least {min}"
            )));
        }
        let mut h = ops::relu(&self.stem_bn.forward(&self.stem.forward(x)?, mode.training())?);
        let mut out = Vec::with_capacity(4);
        for (j, blocks) in self.stages.iter().enumerate() {
            for b in blocks {
                h = b.forward(&h, mode)?;
            }
            out.push(StageFeatureMap {
                tensor: h.clone(),
                stage: j + 1,
            });
        }
        Ok(out)
    }

    /// `D(S_3)` for the dual-stage variants.
    pub fn bdff_downsample(&self, s3: &StageFeatureMap, mode: Mode) -> Result<Tensor> {
        match &self.fusion {
            GlobalFusion::DualStage(step) if s3.stage == 3 => step.downsample(&s3.tensor, mode),
            GlobalFusion::DualStage(_) => Err(Error::invalid(format!(
                "dual-stage downsampling expects the stage-3 map, got stage {}",
                s3.stage
            ))),
            GlobalFusion::Cascade(_) => Err(Error::invalid(format!(
                "variant {} uses cascade fusion, not dual-stage fusion",
                self.config.variant
            ))),
        }
    }

    /// `aff_fuse(D(S_3), S_4)`; only defined for the dual-stage variants.
    pub fn bdff_fuse(&self, s3: &StageFeatureMap, s4: &StageFeatureMap, mode: Mode) -> Result<Tensor> {
        if s4.stage != 4 {
            return Err(Error::invalid(format!("expected the stage-4 map, got stage {}", s4.stage)));
        }
        let d = self.bdff_downsample(s3, mode)?;
        if d.shape() != s4.tensor.shape() {
            return Err(Error::shape("bdff", d.shape(), s4.tensor.shape()));
        }
        self.fusion.steps()[0].aff.fuse(&d, &s4.tensor, mode)
    }

    /// Global fusion of the stage maps, whichever variant is configured.
    pub fn fuse(&self, stages: &[StageFeatureMap], mode: Mode) -> Result<Tensor> {
        match &self.fusion {
            GlobalFusion::DualStage(_) => self.bdff_fuse(&stages[2], &stages[3], mode),
            GlobalFusion::Cascade(steps) => {
                let mut acc = stages[0].tensor.clone();
                for step in steps {
                    acc = step.fuse(&acc, &stages[step.to - 1].tensor, mode)?;
                }
                Ok(acc)
            }
        }
    }

    pub fn forward_trace(&self, x: &Tensor, mode: Mode) -> Result<Trace> {
        let stages = self.forward_stages(x, mode)?;
        let fused = self.fuse(&stages, mode)?;
        let pooled = ops::stats_pool(&fused)?;
        let embedding = self.embed.forward(&pooled)?;
        Ok(Trace {
            stages,
            fused,
            pooled,
            embedding,
        })
    }

    /// Embeddings `(B, 192)` for a batch of features `(B, 1, F, T)`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.forward_trace(x, mode)?.embedding)
    }

    /// Eval-mode embedding of one utterance.
    pub fn forward_embed(&self, utterance_id: &str, features: &FeatureMatrix) -> Result<Embedding> {
        if features.bins() != self.config.feat_dim {
            return Err(Error::shape("features", &[features.frames(), features.bins()], &[0, self.config.feat_dim]));
        }
        let x = features_to_input(std::slice::from_ref(features))?;
        let e = self.forward(&x, Mode::Eval)?;
        let vector = e.to_vec();
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite embedding for {utterance_id}")));
        }
        Ok(Embedding {
            utterance_id: utterance_id.to_string(),
            vector,
        })
    }

    pub fn global_aff_count(&self) -> usize {
        self.fusion.aff_count()
    }
}

/// Stacks equally long `(T, F)` feature matrices into a `(B, 1, F, T)` input.
pub fn features_to_input(batch: &[FeatureMatrix]) -> Result<Tensor> {
    let first = batch.first().ok_or_else(|| Error::invalid("empty feature batch"))?;
    let (t, f) = (first.frames(), first.bins());
    let mut data = Vec::with_capacity(batch.len() * t * f);
    for m in batch {
        if (m.frames(), m.bins()) != (t, f) {
            return Err(Error::shape("feature batch", &[t, f], &[m.frames(), m.bins()]));
        }
        data.extend(m.transposed());
    }
    Tensor::new(data, &[batch.len(), 1, f, t])
}

impl Module for ERes2NetV2 {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.stem.visit(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit(&join(prefix, "stem.bn"), f);
        for (j, blocks) in self.stages.iter().enumerate() {
            for (i, b) in blocks.iter().enumerate() {
                b.visit(&join(prefix, &format!("stage{}.{i}", j + 1)), f);
            }
        }
        for step in self.fusion.steps() {
            step.visit(&join(prefix, &step.prefix()), f);
        }
        self.embed.visit(&join(prefix, "embed"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        self.stem.visit_mut(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit_mut(&join(prefix, "stem.bn"), f);
        for (j, blocks) in self.stages.iter_mut().enumerate() {
            for (i, b) in blocks.iter_mut().enumerate() {
                b.visit_mut(&join(prefix, &format!("stage{}.{i}", j + 1)), f);
            }
        }
        for step in self.fusion.steps_mut() {
            let p = step.prefix();
            step.visit_mut(&join(prefix, &p), f);
        }
        self.embed.visit_mut(&join(prefix, "embed"), f);
    }
}
