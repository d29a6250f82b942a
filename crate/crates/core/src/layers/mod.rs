//! Classical network layers and the training machinery around them: 2-D
//! convolution, 2×2 max pooling, fully-connected layers, MSE loss, and Adam
//! with an exponentially decaying learning rate.
//!
//! Layers own their parameter tensors. A forward pass registers those tensors
//! on a caller-supplied [`Tape`] so gradients can be pulled per parameter
//! after [`Tape::backward`].

mod adam;
mod conv;
mod dense;

pub use adam::{AdamConfig, AdamError, AdamState};
pub use conv::Conv2DLayer;
pub use dense::DenseLayer;

pub use crate::tensor::ops::PaddingKind;

use crate::tensor::tape::{Tape, VarId};
use crate::tensor::TensorError;

/// Mean squared error between a prediction and a target of identical shape:
/// the mean over all elements of the squared difference.
pub fn mse_loss(tape: &mut Tape, pred: VarId, target: VarId) -> Result<VarId, TensorError> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(TensorError::ShapeMismatch {
            op: "mse_loss",
            lhs: tape.shape(pred).to_vec(),
            rhs: tape.shape(target).to_vec(),
        });
    }
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

#[cfg(test)]
mod pool_tests {
    use crate::tensor::check::finite_difference_check;
    use crate::tensor::tape::Tape;
    use crate::tensor::{Tensor, TensorError};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool_shape(h: usize, w: usize) -> (usize, usize) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[h, w, 3]));
        let y = tape.maxpool2x2(x).unwrap();
        (tape.shape(y)[0], tape.shape(y)[1])
    }

    #[test]
    fn max_of_four() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.maxpool2x2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn repeated_pooling_shape_chains() {
        // 10×20 halves to 5×10, 2×5, 1×2; 14×50 to 7×25, 3×12, 1×6.
        assert_eq!(pool_shape(10, 20), (5, 10));
        assert_eq!(pool_shape(5, 10), (2, 5));
        assert_eq!(pool_shape(2, 5), (1, 2));
        assert_eq!(pool_shape(14, 50), (7, 25));
        assert_eq!(pool_shape(7, 25), (3, 12));
        assert_eq!(pool_shape(3, 12), (1, 6));
    }

    #[test]
    fn too_small_input_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 4, 2]));
        assert!(matches!(
            tape.maxpool2x2(x),
            Err(TensorError::DimensionTooSmall { op: "maxpool2x2", .. })
        ));
    }

    #[test]
    fn output_never_exceeds_input_max_and_shifting_commutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let input = Tensor::uniform(&[5, 7, 2], -3.0, 3.0, &mut rng);
            let run = |t: &Tensor| {
                let mut tape = Tape::new();
                let x = tape.leaf(t.clone());
                let y = tape.maxpool2x2(x).unwrap();
                tape.value(y).data().to_vec()
            };
            let pooled = run(&input);
            let input_max = input.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(pooled.iter().all(|&v| v <= input_max));

            // pool(x + c) − c == pool(x)
            let shifted = Tensor::new(
                input.shape().to_vec(),
                input.data().iter().map(|&v| v + 2.5).collect(),
            )
            .unwrap();
            let pooled_shifted = run(&shifted);
            for (a, b) in pooled.iter().zip(&pooled_shifted) {
                assert!((a - (b - 2.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_routes_only_to_argmax() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2, 2, 1], vec![1.0, 9.0, 3.0, 4.0]).unwrap());
        let y = tape.maxpool2x2(x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn pooling_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        // Distinct random values: the pool is differentiable away from ties.
        let input = Tensor::uniform(&[4, 6, 2], -2.0, 2.0, &mut rng);
        let err = finite_difference_check(
            |tape, x| {
                let y = tape.maxpool2x2(x)?;
                let sq = tape.mul(y, y)?;
                Ok(tape.mean(sq))
            },
            &input,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "pool gradient error {err}");
    }
}
