//! ERes2NetV2 speaker verification toolkit.
//!
//! The crate covers the full desk-scale pipeline: a small reverse-mode
//! [`tensor`] library, the [`audio`] front end (WAV I/O, FBank, augmentation),
//! the [`model`] itself with its two ablation variants, AAM-softmax
//! [`train`]ing, trial [`eval`]uation (cosine scoring, EER, MinDCF), an
//! analytic [`profile`]r for parameter and FLOP counts, and a deterministic
//! synthetic corpus generator in [`synth`].

pub mod audio;
pub mod error;
pub mod eval;
pub mod model;
pub mod profile;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
pub use tensor::Tensor;
