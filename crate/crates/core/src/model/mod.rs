//! The ERes2NetV2 graph: stem, four stages of local-fusion blocks, global
//! fusion, temporal statistics pooling and the 192-dim embedding layer.
//!
//! Three variants share the code path. `v2` uses narrow split widths and a
//! single stage-3→4 fusion; `v2_no_bl` keeps that fusion with full split
//! width; `v2_no_bl_bd` falls back to the 1→2→3→4 cascade.

pub mod aff;
pub mod block;
pub mod config;
pub mod network;
pub mod params;

pub use aff::{aff_fuse, aff_weights, Aff};
pub use block::BlffBlock;
pub use config::{BlockPlan, ModelConfig, Variant, EMBEDDING_DIM};
pub use network::{ERes2NetV2, FusionStep, GlobalFusion, Trace};
pub use params::{load_state_dict, parameter_count, parameters, state_dict, Module, Slot, SlotMut};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn training(self) -> bool {
        self == Mode::Train
    }
}

/// Output of stage `stage` (1-based).
#[derive(Debug, Clone)]
pub struct StageFeatureMap {
    pub tensor: Tensor,
    pub stage: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub utterance_id: String,
    pub vector: Vec<f32>,
}
