//! Forecast quality metrics, the persistence baseline, and image-style
//! dumps of true/predicted speed matrices.

mod baseline;
mod dump;

pub use baseline::{persistence_baseline, persistence_predictions};
pub use dump::dump_comparison;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and truth lengths differ: {pred} vs {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("truth value at index {index} is negative ({value})")]
    NegativeTruth { index: usize, value: f64 },
    #[error("empty input: metrics need at least one sample")]
    Empty,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("matrix shapes differ: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("dump needs rank-2 matrices, got shape {shape:?}")]
    NotAMatrix { shape: Vec<usize> },
}

/// Error metrics over an evaluation set, in physical units.
///
/// `mre` is the mean of `|y − ŷ| / y` over samples with `y > 0`; samples with
/// a zero true value are excluded from that mean (and counted) because the
/// relative error is undefined there. `mae` and `rmse` are km/h and always
/// cover every sample. `rmse ≥ mae` by the power-mean inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mre: f64,
    pub mae: f64,
    pub rmse: f64,
    pub sample_count: usize,
    pub excluded_zero_targets: usize,
}

/// Mean relative / absolute / root-mean-squared error between predictions
/// and true speeds (both km/h, element-aligned).
pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<MetricsReport, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut rel_sum = 0.0;
    let mut rel_count = 0usize;
    for (index, (&p, &y)) in pred.iter().zip(truth).enumerate() {
        if y < 0.0 {
            return Err(EvalError::NegativeTruth { index, value: y });
        }
        let err = (y - p).abs();
        abs_sum += err;
        sq_sum += err * err;
        if y > 0.0 {
            rel_sum += err / y;
            rel_count += 1;
        }
    }
    let count = pred.len();
    let report = MetricsReport {
        mre: if rel_count > 0 { rel_sum / rel_count as f64 } else { 0.0 },
        mae: abs_sum / count as f64,
        rmse: (sq_sum / count as f64).sqrt(),
        sample_count: count,
        excluded_zero_targets: count - rel_count,
    };
    // Power-mean inequality, with one-ulp slack for the equal-error case.
    assert!(
        report.rmse >= report.mae - 1e-12 * report.mae.max(1.0),
        "rmse {} fell below mae {}",
        report.rmse,
        report.mae
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions_give_zero_everything() {
        let r = compute_metrics(&[10.0, 20.0, 30.0], &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!((r.mre, r.mae, r.rmse), (0.0, 0.0, 0.0));
        assert_eq!(r.sample_count, 3);
    }

    #[test]
    fn hand_computed_example() {
        let r = compute_metrics(&[12.0, 16.0], &[10.0, 20.0]).unwrap();
        assert!((r.mre - 0.2).abs() < 1e-12);
        assert!((r.mae - 3.0).abs() < 1e-12);
        assert!((r.rmse - 10f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.excluded_zero_targets, 0);
    }

    #[test]
    fn zero_targets_are_excluded_from_mre_only() {
        let r = compute_metrics(&[1.0, 10.0], &[0.0, 10.0]).unwrap();
        assert_eq!(r.mre, 0.0);
        assert_eq!(r.excluded_zero_targets, 1);
        assert!((r.mae - 0.5).abs() < 1e-12);
        assert!((r.rmse - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            compute_metrics(&[1.0], &[1.0, 2.0]),
            Err(EvalError::LengthMismatch { pred: 1, truth: 2 })
        ));
    }

    #[test]
    fn negative_truth_is_an_error() {
        assert!(matches!(
            compute_metrics(&[1.0, 1.0], &[5.0, -2.0]),
            Err(EvalError::NegativeTruth { index: 1, .. })
        ));
    }

    #[test]
    fn agrees_with_naive_two_pass_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let n = rng.random_range(1..200usize);
            let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..90.0)).collect();
            let pred: Vec<f64> = truth.iter().map(|&y| y + rng.random_range(-5.0..5.0)).collect();
            let r = compute_metrics(&pred, &truth).unwrap();

            // Naive two-pass route: materialize the per-sample errors first.
            let errs: Vec<f64> = pred.iter().zip(&truth).map(|(&p, &y)| (y - p).abs()).collect();
            let mae = errs.iter().sum::<f64>() / n as f64;
            let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
            let rels: Vec<f64> = errs
                .iter()
                .zip(&truth)
                .filter(|(_, &y)| y > 0.0)
                .map(|(e, &y)| e / y)
                .collect();
            let mre = if rels.is_empty() { 0.0 } else { rels.iter().sum::<f64>() / rels.len() as f64 };

            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
            assert!(close(r.mae, mae) && close(r.rmse, rmse) && close(r.mre, mre));
        }
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae_and_permutation_invariance(
            values in proptest::collection::vec((0.0f64..80.0, -10.0f64..10.0), 1..60),
            seed in 0u64..1000,
        ) {
            let truth: Vec<f64> = values.iter().map(|(y, _)| *y).collect();
            let pred: Vec<f64> = values.iter().map(|(y, e)| (y + e).max(0.0)).collect();
            let r = compute_metrics(&pred, &truth).unwrap();
            prop_assert!(r.rmse >= r.mae - 1e-12 * r.mae.max(1.0));
            prop_assert!(r.mre >= 0.0);

            // A common permutation of (pred, truth) leaves the report intact.
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut order: Vec<usize> = (0..truth.len()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pred_p: Vec<f64> = order.iter().map(|&i| pred[i]).collect();
            let truth_p: Vec<f64> = order.iter().map(|&i| truth[i]).collect();
            let rp = compute_metrics(&pred_p, &truth_p).unwrap();
            prop_assert!((r.mae - rp.mae).abs() < 1e-9);
            prop_assert!((r.rmse - rp.rmse).abs() < 1e-9);
            prop_assert!((r.mre - rp.mre).abs() < 1e-9);
            prop_assert_eq!(r.excluded_zero_targets, rp.excluded_zero_targets);
        }
    }
}
