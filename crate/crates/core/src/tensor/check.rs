//! Central finite-difference oracle for tape gradients.
//!
//! The checker evaluates a tape-expressed scalar function twice per input
//! coordinate and compares the symmetric difference quotient against the
//! analytic gradient from [`Tape::backward`]. The difference route never
//! touches the backward code, so agreement is meaningful evidence.

use super::tape::{Tape, VarId};
use super::{Tensor, TensorError};

/// Maximum over coordinates of
/// `|analytic − central difference| / max(1, |analytic|)`
/// for a scalar-valued function `f` of one tensor, using step `h`.
///
/// `f` receives a fresh tape and the variable holding the (possibly
/// perturbed) input, and must return a scalar variable.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, VarId) -> Result<VarId, TensorError>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(TensorError::Invalid {
            op: "finite_difference_check",
            detail: format!("step must be positive, got {h}"),
        });
    }

    let eval = |point: &Tensor| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let xv = tape.leaf(point.clone());
        let y = f(&mut tape, xv)?;
        let value = tape.value(y).item().map_err(|_| TensorError::NotScalar {
            op: "finite_difference_check",
            shape: tape.value(y).shape().to_vec(),
        })?;
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                op: "finite_difference_check",
            });
        }
        Ok(value)
    };

    // Analytic gradient at the base point.
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(&mut tape, xv)?;
    if tape.value(y).len() != 1 {
        return Err(TensorError::NotScalar {
            op: "finite_difference_check",
            shape: tape.value(y).shape().to_vec(),
        });
    }
    if !tape.value(y).item()?.is_finite() {
        return Err(TensorError::NonFinite {
            op: "finite_difference_check",
        });
    }
    let grads = tape.backward(y)?;
    let analytic = grads.get(xv).expect("parameter gradient").data().to_vec();

    let mut max_err: f64 = 0.0;
    let mut point = x.clone();
    for (i, &gradient) in analytic.iter().enumerate() {
        let original = point.data()[i];
        point.data_mut()[i] = original + h;
        let plus = eval(&point)?;
        point.data_mut()[i] = original - h;
        let minus = eval(&point)?;
        point.data_mut()[i] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let err = (gradient - numeric).abs() / gradient.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
