//! Spatio-temporal speed data: ingestion, gap imputation, `[0, 1]` scaling,
//! train/eval splitting, sliding-window dataset construction, and a synthetic
//! generator for desk-scale experiments.

mod csv;
mod impute;
mod pipeline;
mod synth;
mod window;

pub use pipeline::{prepare, prepare_eval, PreparedData, SplitSpec};
pub use synth::{generate_synthetic, SyntheticProfile};
pub use window::{make_windows, split_train_eval, WindowedDataset};

use chrono::{NaiveDateTime, Timelike};
use thiserror::Error;

use crate::tensor::TensorError;

/// Fixed measurement cadence of the speed sensors.
pub const CADENCE_MINUTES: i64 = 15;
/// Time-of-day slots per day at the fixed cadence.
pub const SLOTS_PER_DAY: usize = 96;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {detail}")]
    Csv { line: usize, detail: String },
    #[error("sensor '{id}' has no usable measurements in the statistics rows")]
    EmptySensor { id: String },
    #[error("scaling range is degenerate (min == max == {value})")]
    DegenerateScale { value: f64 },
    #[error("matrix still contains missing values; impute before windowing")]
    MissingValues,
    #[error("geometry mismatch: {detail}")]
    Geometry { detail: String },
    #[error("windows need {needed} contiguous rows, longest run has {available}")]
    InsufficientRows { needed: usize, available: usize },
    #[error("split boundary {boundary} leaves the {side} side empty")]
    EmptySplit { boundary: NaiveDateTime, side: &'static str },
    #[error("invalid matrix: {detail}")]
    InvalidMatrix { detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Scaling statistics fitted on training rows only.
///
/// `scale` maps `[min, max]` linearly onto `[0, 1]`; evaluation-period values
/// outside the training range map outside `[0, 1]` and are left untouched.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalingStats {
    pub min: f64,
    pub max: f64,
}

impl ScalingStats {
    /// Min/max over the present values of a matrix.
    pub fn fit(matrix: &SpeedMatrix) -> Result<Self, DataError> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for (idx, &v) in matrix.values.iter().enumerate() {
            if matrix.missing[idx] {
                continue;
            }
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() {
            return Err(DataError::InvalidMatrix {
                detail: "no present values to fit scaling statistics".into(),
            });
        }
        if max <= min {
            return Err(DataError::DegenerateScale { value: min });
        }
        Ok(ScalingStats { min, max })
    }

    pub fn scale(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn unscale(&self, s: f64) -> f64 {
        self.min + s * (self.max - self.min)
    }
}

/// A `T×N` record of physical speeds (km/h): one row per 15-minute timestamp,
/// one column per sensor, plus a missing-value mask.
///
/// Freshly loaded matrices have exactly uniform 15-minute spacing. Dropping
/// sensor-outage days leaves gaps that are whole multiples of the cadence;
/// windowing never crosses such a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedMatrix {
    values: Vec<f64>,
    missing: Vec<bool>,
    timestamps: Vec<NaiveDateTime>,
    sensor_ids: Vec<String>,
}

impl SpeedMatrix {
    /// Validates ordering, cadence alignment, and non-negativity.
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        sensor_ids: Vec<String>,
        values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self, DataError> {
        let rows = timestamps.len();
        let cols = sensor_ids.len();
        if values.len() != rows * cols || missing.len() != values.len() {
            return Err(DataError::InvalidMatrix {
                detail: format!(
                    "{rows} rows x {cols} sensors needs {} cells, got {} values / {} mask entries",
                    rows * cols,
                    values.len(),
                    missing.len()
                ),
            });
        }
        if rows == 0 || cols == 0 {
            return Err(DataError::InvalidMatrix {
                detail: "matrix must have at least one row and one sensor".into(),
            });
        }
        for pair in timestamps.windows(2) {
            let delta = (pair[1] - pair[0]).num_minutes();
            if delta <= 0 {
                return Err(DataError::InvalidMatrix {
                    detail: format!("timestamps not strictly increasing around {}", pair[0]),
                });
            }
            if delta % CADENCE_MINUTES != 0 {
                return Err(DataError::InvalidMatrix {
                    detail: format!("timestamp spacing of {delta} minutes is not a multiple of the cadence"),
                });
            }
        }
        for (idx, (&v, &m)) in values.iter().zip(&missing).enumerate() {
            if !m && (!v.is_finite() || v < 0.0) {
                return Err(DataError::InvalidMatrix {
                    detail: format!("cell {idx} holds invalid speed {v}"),
                });
            }
        }
        Ok(SpeedMatrix {
            values,
            missing,
            timestamps,
            sensor_ids,
        })
    }

    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn sensors(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn sensor_ids(&self) -> &[String] {
        &self.sensor_ids
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    /// Raw cell value; meaningful only where not missing.
    pub fn raw(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.sensors() + col]
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[row * self.sensors() + col]
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        if self.is_missing(row, col) {
            None
        } else {
            Some(self.raw(row, col))
        }
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Time-of-day slot (0..=95) of a row.
    pub fn slot_index(&self, row: usize) -> usize {
        let t = self.timestamps[row];
        ((t.hour() * 60 + t.minute()) as i64 / CADENCE_MINUTES) as usize
    }

    /// Contiguous runs of rows with exact cadence spacing, as `start..end`
    /// index ranges. A freshly loaded matrix is a single run.
    pub fn contiguous_runs(&self) -> Vec<std::ops::Range<usize>> {
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 1..self.rows() {
            if (self.timestamps[i] - self.timestamps[i - 1]).num_minutes() != CADENCE_MINUTES {
                runs.push(start..i);
                start = i;
            }
        }
        runs.push(start..self.rows());
        runs
    }

    /// Drops every day whose fraction of missing cells exceeds `threshold`,
    /// modeling days when the sensors did not work. Day boundaries follow the
    /// civil date of the timestamps.
    pub fn drop_sparse_days(&self, threshold: f64) -> Result<SpeedMatrix, DataError> {
        let cols = self.sensors();
        let mut keep = vec![true; self.rows()];
        let mut row = 0;
        while row < self.rows() {
            let date = self.timestamps[row].date();
            let mut end = row;
            while end < self.rows() && self.timestamps[end].date() == date {
                end += 1;
            }
            let cells = (end - row) * cols;
            let missing = self.missing[row * cols..end * cols].iter().filter(|&&m| m).count();
            if missing as f64 > threshold * cells as f64 {
                keep[row..end].iter_mut().for_each(|k| *k = false);
            }
            row = end;
        }
        if keep.iter().all(|&k| !k) {
            return Err(DataError::InvalidMatrix {
                detail: "every day exceeds the missing-data threshold".into(),
            });
        }
        if keep.iter().all(|&k| k) {
            return Ok(self.clone());
        }
        let mut timestamps = Vec::new();
        let mut values = Vec::new();
        let mut missing = Vec::new();
        for (r, &kept) in keep.iter().enumerate() {
            if kept {
                timestamps.push(self.timestamps[r]);
                values.extend_from_slice(&self.values[r * cols..(r + 1) * cols]);
                missing.extend_from_slice(&self.missing[r * cols..(r + 1) * cols]);
            }
        }
        SpeedMatrix::new(timestamps, self.sensor_ids.clone(), values, missing)
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn missing_mask(&self) -> &[bool] {
        &self.missing
    }
}

/// Small constructors for synthetic matrices, used by tests here and by the
/// acceptance suite of the command-line crate.
pub mod test_support {
    use super::*;
    use chrono::NaiveDate;

    pub fn base_time() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    /// Gap-free matrix from a value function; `missing` marks holes.
    pub fn matrix_from_fn(
        rows: usize,
        sensors: usize,
        value: impl Fn(usize, usize) -> f64,
        missing: impl Fn(usize, usize) -> bool,
    ) -> SpeedMatrix {
        let timestamps = (0..rows)
            .map(|r| base_time() + chrono::Duration::minutes(CADENCE_MINUTES * r as i64))
            .collect();
        let ids = (0..sensors).map(|s| format!("s{s:02}")).collect();
        let mut values = Vec::with_capacity(rows * sensors);
        let mut mask = Vec::with_capacity(rows * sensors);
        for r in 0..rows {
            for c in 0..sensors {
                values.push(value(r, c));
                mask.push(missing(r, c));
            }
        }
        SpeedMatrix::new(timestamps, ids, values, mask).unwrap()
    }
}
