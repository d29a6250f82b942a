//! Traffic-speed forecasting on spatio-temporal speed images, built from
//! scratch: a tape-based autodiff tensor core, a three-stage CNN baseline, a
//! capsule network with routing-by-agreement, and the data plumbing around
//! them (CSV ingestion, imputation, min-max scaling, sliding windows,
//! synthetic data, metrics, checkpoints).
//!
//! The crate is organized the way the data flows:
//!
//! - [`tensor`] — dense `f64` tensors, the gradient tape, finite-difference
//!   checking.
//! - [`layers`] — convolution, pooling, dense, MSE, Adam.
//! - [`capsule`] — squash, primary capsules, per-pair prediction transforms,
//!   dynamic routing, capsule-length readout.
//! - [`model`] — the two architectures, training loop, parameter audit,
//!   checkpoints.
//! - [`data`] — speed matrices, imputation, scaling, windowing, synthetic
//!   generation.
//! - [`eval`] — error metrics, persistence baseline, image-style dumps.

pub mod capsule;
pub mod data;
pub mod eval;
pub mod layers;
pub mod model;
pub mod tensor;

pub use tensor::{tape::Tape, tape::VarId, Tensor, TensorError};
