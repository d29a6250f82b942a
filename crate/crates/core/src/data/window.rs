//! Sliding-window dataset construction and the chronological train/eval split.

use chrono::NaiveDateTime;

use super::{DataError, ScalingStats, SpeedMatrix};
use crate::model::TaskSpec;
use crate::tensor::Tensor;

/// Paired training samples: an `M×N` scaled speed image and its `L·N` scaled
/// label vector, plus the statistics needed to undo the scaling.
///
/// Labels are laid out row-major over (horizon step, segment): entry
/// `(l-1)·N + n` is segment `n` at horizon step `l`.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<Tensor>,
    pub stats: ScalingStats,
    pub task: TaskSpec,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Cuts stride-1 windows out of an imputed matrix: `M` rows of history as the
/// input image, the following `L` rows flattened as the label. Windows never
/// span a cadence gap; a gap-free block of `T'` rows yields `T'−M−L+1`
/// samples.
pub fn make_windows(
    matrix: &SpeedMatrix,
    task: &TaskSpec,
    stats: &ScalingStats,
) -> Result<WindowedDataset, DataError> {
    if matrix.sensors() != task.segments {
        return Err(DataError::Geometry {
            detail: format!(
                "task expects {} segments but the data has {} sensors",
                task.segments,
                matrix.sensors()
            ),
        });
    }
    if matrix.missing_count() > 0 {
        return Err(DataError::MissingValues);
    }
    let m = task.history;
    let l = task.horizon;
    let n = task.segments;
    let needed = m + l;

    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut longest_run = 0;
    for run in matrix.contiguous_runs() {
        let t = run.len();
        longest_run = longest_run.max(t);
        if t < needed {
            continue;
        }
        for start in run.start..=(run.end - needed) {
            let mut image = Vec::with_capacity(m * n);
            for r in start..start + m {
                for c in 0..n {
                    image.push(stats.scale(matrix.raw(r, c)));
                }
            }
            let mut label = Vec::with_capacity(l * n);
            for r in start + m..start + m + l {
                for c in 0..n {
                    label.push(stats.scale(matrix.raw(r, c)));
                }
            }
            inputs.push(Tensor::new(vec![m, n], image)?);
            labels.push(Tensor::new(vec![l * n], label)?);
        }
    }
    if inputs.is_empty() {
        return Err(DataError::InsufficientRows {
            needed,
            available: longest_run,
        });
    }
    Ok(WindowedDataset {
        inputs,
        labels,
        stats: *stats,
        task: task.clone(),
    })
}

/// Splits the rows at the first timestamp `>= boundary`. Both sides must be
/// non-empty. Windowing the two sides separately guarantees no window
/// straddles the boundary.
pub fn split_train_eval(
    matrix: &SpeedMatrix,
    boundary: NaiveDateTime,
) -> Result<(SpeedMatrix, SpeedMatrix), DataError> {
    let split = matrix
        .timestamps()
        .iter()
        .position(|&t| t >= boundary)
        .unwrap_or(matrix.rows());
    if split == 0 {
        return Err(DataError::EmptySplit {
            boundary,
            side: "training",
        });
    }
    if split == matrix.rows() {
        return Err(DataError::EmptySplit {
            boundary,
            side: "evaluation",
        });
    }
    Ok((matrix.take_rows(0..split), matrix.take_rows(split..matrix.rows())))
}

impl SpeedMatrix {
    pub(crate) fn take_rows(&self, range: std::ops::Range<usize>) -> SpeedMatrix {
        let cols = self.sensors();
        SpeedMatrix::new(
            self.timestamps()[range.clone()].to_vec(),
            self.sensor_ids().to_vec(),
            self.values()[range.start * cols..range.end * cols].to_vec(),
            self.missing_mask()[range.start * cols..range.end * cols].to_vec(),
        )
        .expect("row slice of a valid matrix is valid")
    }
}
