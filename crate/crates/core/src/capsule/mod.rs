//! Capsule machinery: squash nonlinearity, primary capsule formation,
//! per-pair prediction transforms, routing-by-agreement, and the
//! capsule-length readout.
//!
//! A capsule is a vector of activations whose direction carries feature
//! properties and whose Euclidean length — kept below 1 by
//! [`Tape::squash_rows`] — acts as the prediction magnitude. The output layer
//! holds one 16-dimensional capsule per (horizon step, road segment) pair,
//! and its length is read out as the scaled speed.

mod primary;
mod routing;
mod traffic;

pub use primary::PrimaryCapsLayer;
pub use routing::{dynamic_routing, RoutingTrace};
pub use traffic::TrafficCapsLayer;

use crate::tensor::tape::{Tape, VarId};
use crate::tensor::TensorError;

/// Euclidean length of every capsule in an `(num_capsules, dim)` tensor.
/// Lengths of squashed capsules lie in `[0, 1)`; a small ε under the root
/// keeps the readout differentiable at the zero capsule.
pub fn capsule_lengths(tape: &mut Tape, capsules: VarId) -> Result<VarId, TensorError> {
    tape.row_norms(capsules)
}
