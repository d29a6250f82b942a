//! End-to-end dataset preparation: outage-day dropping, leakage-free
//! imputation, chronological split, scaling, and windowing in one call.

use chrono::NaiveDateTime;

use super::{make_windows, split_train_eval, DataError, ScalingStats, SpeedMatrix, WindowedDataset};
use crate::model::TaskSpec;

/// Where to cut the train/eval boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// Fraction of rows that go to training, e.g. `0.75`.
    Fraction(f64),
    /// Explicit boundary timestamp; evaluation starts here.
    At(NaiveDateTime),
}

/// Output of [`prepare`].
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: WindowedDataset,
    pub eval: WindowedDataset,
    pub stats: ScalingStats,
    pub boundary: NaiveDateTime,
}

/// Standard preprocessing order. Days with more missing cells than
/// `day_drop_threshold` allows are removed first; imputation statistics and
/// scaling statistics both come from rows before the boundary only, so
/// nothing of the evaluation period leaks into training.
pub fn prepare(
    matrix: &SpeedMatrix,
    task: &TaskSpec,
    split: SplitSpec,
    day_drop_threshold: f64,
) -> Result<PreparedData, DataError> {
    let cleaned = matrix.drop_sparse_days(day_drop_threshold)?;
    let boundary = match split {
        SplitSpec::At(t) => t,
        SplitSpec::Fraction(f) => {
            if !(0.0 < f && f < 1.0) {
                return Err(DataError::Geometry {
                    detail: format!("split fraction {f} must lie strictly between 0 and 1"),
                });
            }
            let row = ((cleaned.rows() as f64) * f).round() as usize;
            let row = row.clamp(1, cleaned.rows() - 1);
            cleaned.timestamps()[row]
        }
    };
    let stat_rows = cleaned
        .timestamps()
        .iter()
        .position(|&t| t >= boundary)
        .unwrap_or(cleaned.rows());
    if stat_rows == 0 {
        return Err(DataError::EmptySplit {
            boundary,
            side: "training",
        });
    }
    let imputed = cleaned.impute_using_rows(stat_rows)?;
    let (train_rows, eval_rows) = split_train_eval(&imputed, boundary)?;
    let stats = ScalingStats::fit(&train_rows)?;
    let train = make_windows(&train_rows, task, &stats)?;
    let eval = make_windows(&eval_rows, task, &stats)?;
    Ok(PreparedData {
        train,
        eval,
        stats,
        boundary,
    })
}

/// Evaluation-side preparation against an existing model: identical cleaning,
/// imputation, and split rules, but windows are scaled with the supplied
/// statistics (the ones the model was trained with) instead of refitting.
/// Returns the evaluation windows and the resolved boundary.
pub fn prepare_eval(
    matrix: &SpeedMatrix,
    task: &TaskSpec,
    split: SplitSpec,
    day_drop_threshold: f64,
    stats: ScalingStats,
) -> Result<(WindowedDataset, NaiveDateTime), DataError> {
    let cleaned = matrix.drop_sparse_days(day_drop_threshold)?;
    let boundary = match split {
        SplitSpec::At(t) => t,
        SplitSpec::Fraction(f) => {
            if !(0.0 < f && f < 1.0) {
                return Err(DataError::Geometry {
                    detail: format!("split fraction {f} must lie strictly between 0 and 1"),
                });
            }
            let row = ((cleaned.rows() as f64) * f).round() as usize;
            cleaned.timestamps()[row.clamp(1, cleaned.rows() - 1)]
        }
    };
    let stat_rows = cleaned
        .timestamps()
        .iter()
        .position(|&t| t >= boundary)
        .unwrap_or(cleaned.rows());
    if stat_rows == 0 {
        return Err(DataError::EmptySplit {
            boundary,
            side: "training",
        });
    }
    let imputed = cleaned.impute_using_rows(stat_rows)?;
    let (_, eval_rows) = split_train_eval(&imputed, boundary)?;
    let eval = make_windows(&eval_rows, task, &stats)?;
    Ok((eval, boundary))
}
