//! Output capsule layer: per-pair linear prediction transforms.

use rand::Rng;

use crate::tensor::tape::{Tape, VarId};
use crate::tensor::{Tensor, TensorError};

/// Transform bank mapping every input capsule to a prediction for every
/// output capsule: `û[i,j,:] = u[i,:] · W[i,j,:,:]`.
///
/// There are no bias terms; the trainable count is exactly
/// `num_in · num_out · in_dim · out_dim`.
#[derive(Clone, Debug)]
pub struct TrafficCapsLayer {
    /// `(num_in, num_out, in_dim, out_dim)` prediction transforms.
    pub transforms: Tensor,
    pub routing_iterations: usize,
}

impl TrafficCapsLayer {
    pub fn init<R: Rng + ?Sized>(
        num_in: usize,
        num_out: usize,
        in_dim: usize,
        out_dim: usize,
        routing_iterations: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        TrafficCapsLayer {
            transforms: Tensor::uniform(&[num_in, num_out, in_dim, out_dim], -bound, bound, rng),
            routing_iterations,
        }
    }

    pub fn zeroed(num_in: usize, num_out: usize, in_dim: usize, out_dim: usize, routing_iterations: usize) -> Self {
        TrafficCapsLayer {
            transforms: Tensor::zeros(&[num_in, num_out, in_dim, out_dim]),
            routing_iterations,
        }
    }

    pub fn num_in(&self) -> usize {
        self.transforms.shape()[0]
    }

    pub fn num_out(&self) -> usize {
        self.transforms.shape()[1]
    }

    pub fn parameter_count(&self) -> usize {
        self.transforms.len()
    }

    /// Prediction vectors for all pairs: `(num_in, in_dim)` capsules to a
    /// `(num_in, num_out, out_dim)` tensor. Returns `(û, transform var)`.
    pub fn predict(&self, tape: &mut Tape, capsules: VarId) -> Result<(VarId, VarId), TensorError> {
        let w = self.bind(tape);
        let u_hat = self.apply(tape, w, capsules)?;
        Ok((u_hat, w))
    }

    /// Registers the transform bank once for reuse across samples.
    pub fn bind(&self, tape: &mut Tape) -> VarId {
        tape.param(self.transforms.clone())
    }

    /// Applies the transforms using an already-registered parameter.
    pub fn apply(&self, tape: &mut Tape, transforms: VarId, capsules: VarId) -> Result<VarId, TensorError> {
        tape.caps_predict(capsules, transforms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_transforms_zero_pad_the_input() {
        // W[i,j] = identity on the first in_dim columns: û is u zero-padded.
        let (num_in, num_out, d_in, d_out) = (3, 2, 4, 6);
        let mut layer = TrafficCapsLayer::zeroed(num_in, num_out, d_in, d_out, 3);
        for i in 0..num_in {
            for j in 0..num_out {
                for d in 0..d_in {
                    let idx = (((i * num_out) + j) * d_in + d) * d_out + d;
                    layer.transforms.data_mut()[idx] = 1.0;
                }
            }
        }
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::new(vec![3, 4], (0..12).map(|v| v as f64).collect()).unwrap());
        let (u_hat, _) = layer.predict(&mut tape, u).unwrap();
        assert_eq!(tape.shape(u_hat), &[3, 2, 6]);
        let v = tape.value(u_hat);
        for i in 0..num_in {
            for j in 0..num_out {
                let row = &v.data()[(i * num_out + j) * d_out..][..d_out];
                for d in 0..d_in {
                    assert_eq!(row[d], (i * 4 + d) as f64);
                }
                assert_eq!(row[4], 0.0);
                assert_eq!(row[5], 0.0);
            }
        }
    }

    #[test]
    fn task1_transform_count() {
        // 3200 input capsules, 20 outputs, 8→16 transforms.
        let layer = TrafficCapsLayer::zeroed(3200, 20, 8, 16, 3);
        assert_eq!(layer.parameter_count(), 8_192_000);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let layer = TrafficCapsLayer::zeroed(4, 2, 8, 16, 3);
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::zeros(&[4, 7]));
        assert!(layer.predict(&mut tape, u).is_err());
    }

    #[test]
    fn transform_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let layer = TrafficCapsLayer::init(3, 2, 4, 5, 3, &mut rng);
        let u = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);

        let u_cl = u.clone();
        let err = finite_difference_check(
            move |tape, w| {
                let uv = tape.leaf(u_cl.clone());
                let u_hat = tape.caps_predict(uv, w)?;
                let sq = tape.mul(u_hat, u_hat)?;
                Ok(tape.mean(sq))
            },
            &layer.transforms,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "transform gradient error {err}");

        // And w.r.t. the input capsules.
        let w = layer.transforms.clone();
        let err = finite_difference_check(
            move |tape, u| {
                let wv = tape.leaf(w.clone());
                let u_hat = tape.caps_predict(u, wv)?;
                let sq = tape.mul(u_hat, u_hat)?;
                Ok(tape.mean(sq))
            },
            &u,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "capsule gradient error {err}");
    }
}
