//! Fully-connected layer with a linear output.

use rand::Rng;

use crate::tensor::tape::{Tape, VarId};
use crate::tensor::{Tensor, TensorError};

/// Affine map from a flat feature vector to the prediction vector.
/// Weights are `(in_len, out_len)`; the activation is the identity.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn init<R: Rng + ?Sized>(in_len: usize, out_len: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_len as f64).sqrt();
        DenseLayer {
            weights: Tensor::uniform(&[in_len, out_len], -bound, bound, rng),
            bias: Tensor::zeros(&[out_len]),
        }
    }

    pub fn zeroed(in_len: usize, out_len: usize) -> Self {
        DenseLayer {
            weights: Tensor::zeros(&[in_len, out_len]),
            bias: Tensor::zeros(&[out_len]),
        }
    }

    pub fn in_len(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn out_len(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// `y = x · W + b` for a rank-1 input of length `in_len`.
    /// Returns `(output, weight var, bias var)`.
    pub fn forward(&self, tape: &mut Tape, input: VarId) -> Result<(VarId, VarId, VarId), TensorError> {
        let vars = self.bind(tape);
        let out = self.apply(tape, vars, input)?;
        Ok((out, vars.0, vars.1))
    }

    /// Registers weights and bias once for reuse across samples.
    pub fn bind(&self, tape: &mut Tape) -> (VarId, VarId) {
        (tape.param(self.weights.clone()), tape.param(self.bias.clone()))
    }

    /// Applies the affine map using already-registered parameters.
    pub fn apply(&self, tape: &mut Tape, (weights, bias): (VarId, VarId), input: VarId) -> Result<VarId, TensorError> {
        let shape = tape.shape(input).to_vec();
        if shape != [self.in_len()] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                lhs: shape,
                rhs: vec![self.in_len()],
            });
        }
        let row = tape.reshape(input, &[1, self.in_len()])?;
        let prod = tape.matmul(row, weights)?;
        let flat = tape.reshape(prod, &[self.out_len()])?;
        tape.add(flat, bias)
    }
}
