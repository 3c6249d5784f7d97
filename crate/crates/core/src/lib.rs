//! Unsupervised domain adaptation for device-free RF gesture recognition.
//!
//! A CNN+GRU recognizer is trained on labeled source-domain samples while
//! unlabeled target-domain samples contribute through confident pseudo labels
//! (consistency between a sample and its erased view) and a constraint that
//! keeps target predictions from collapsing to overconfident outputs.
//!
//! Everything runs on a small reverse-mode autodiff engine in [`tensor`].

pub mod augment;
pub mod dataset;
mod error;
pub mod eval;
pub mod rfnet;
pub mod rng;
pub mod tensor;
pub mod uda;

pub use augment::{AugmentMode, AugmentPolicy};
pub use dataset::{Dataset, DomainSplit, DomainTag, Factor, GestureSample, SynthSpec, TargetTruth};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport};
pub use rfnet::{Arch, ModelParams};
pub use tensor::{Mode, Tape, Tensor, Var};
pub use uda::{EpochReport, LcDivisor, TrainConfig, Trainer};
