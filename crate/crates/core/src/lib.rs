//! Joint plant species and leaf disease classification.
//!
//! A small tape-based autodiff engine drives a custom CNN with several
//! prediction-head paradigms: independent single-target models, a powerset
//! head over observed (species, disease) pairs, a two-branch multi-output
//! head, and a stacked variant whose second stage feeds each branch the
//! other branch's class probabilities.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub(crate) mod kernels;
pub mod labels;
pub mod metrics;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{CheckpointError, Error, Result};
pub use tensor::Tensor;
