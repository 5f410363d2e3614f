//! Numeric core for a two-speed, shared-weight recurrent transformer
//! language model (HRM-LM), its stacked and flat-iteration baselines, a
//! deterministic training harness, and analytical memory/parameter/FLOP
//! calculators.
//!
//! The crate is `no_std` and only needs `alloc`. Everything runs in `f64`
//! on a small reverse-mode tape ([`tape::Tape`]) so that every backward pass
//! can be validated against central finite differences
//! ([`gradcheck::grad_check`]).
//!
//! File IO, configuration files and the command-line driver live in the
//! companion `hrm-lm` crate.

#![no_std]

extern crate alloc;

pub mod analysis;
pub mod baselines;
pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hrm;
pub mod model;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{LanguageModel, Model, ModelConfig, ModelKind};
pub use params::{BoundParams, Grads, ParamId, ParamSet};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
