//! Sparse neural network training on hard samples.
//!
//! The crate bundles a small reverse-mode autodiff engine, desk-scale models,
//! mask and density-plan machinery, five sparsification methods (GMP, SET,
//! SNIP, one-shot LTH and OMP) plus fixed-topology variants, hard-sample
//! pipelines (EL2N filtering, common corruptions, PGD adversarial training)
//! and an experiment harness that records metrics, density reports and
//! training-FLOPs ledgers.

pub mod data;
pub mod engine;
pub mod harness;
pub mod error;
pub mod model;
pub mod sparsifiers;
pub mod sparsity;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{one_hot, Float, Tensor};
