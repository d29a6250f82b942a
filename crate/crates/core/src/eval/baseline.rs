//! Persistence baseline: tomorrow looks exactly like right now.

use super::{compute_metrics, EvalError, MetricsReport};
use crate::data::WindowedDataset;

/// Naive forecaster that repeats the last observed row of each window for
/// every horizon step, evaluated in km/h. Any trained model worth keeping
/// must beat this.
pub fn persistence_baseline(dataset: &WindowedDataset) -> Result<MetricsReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Empty);
    }
    let (pred, truth) = persistence_predictions(dataset);
    compute_metrics(&pred, &truth)
}

/// The baseline's raw (prediction, truth) pairs in km/h, sample-major.
pub fn persistence_predictions(dataset: &WindowedDataset) -> (Vec<f64>, Vec<f64>) {
    let task = &dataset.task;
    let n = task.segments;
    let stats = dataset.stats;
    let mut pred = Vec::with_capacity(dataset.len() * task.label_len());
    let mut truth = Vec::with_capacity(dataset.len() * task.label_len());
    for (input, label) in dataset.inputs.iter().zip(&dataset.labels) {
        let last_row = &input.data()[(task.history - 1) * n..];
        for _step in 0..task.horizon {
            pred.extend(last_row.iter().map(|&v| stats.unscale(v)));
        }
        truth.extend(label.data().iter().map(|&v| stats.unscale(v)));
    }
    (pred, truth)
}
