//! Minibatch training loop.
//!
//! Each batch is split into fixed-size groups of samples. Groups are
//! processed in parallel — one tape per group, parameters registered once —
//! and their gradient sums are reduced in group order afterwards. Because the
//! grouping depends only on the shuffled sample order (which is a pure
//! function of the run seed), training is bit-reproducible regardless of how
//! many worker threads execute it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, Model, ModelError};
use crate::data::{ScalingStats, WindowedDataset};
use crate::layers::{mse_loss, AdamConfig, AdamState};
use crate::tensor::{tape::Tape, Tensor};

/// Samples per gradient group. Fixed (not thread-count dependent) so the
/// floating-point reduction order never changes.
const GROUP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 42,
        }
    }
}

/// Incremental training driver owning the model and optimizer state.
pub struct Trainer {
    model: Model,
    adam: AdamState,
    rng: ChaCha8Rng,
    config: TrainConfig,
    last_finite_loss: f64,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Self {
        let adam = AdamState::new(config.adam, &model.params());
        Trainer {
            model,
            adam,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            last_finite_loss: f64::INFINITY,
        }
    }

    /// Rebuilds a trainer around checkpointed model and optimizer state.
    pub fn resume(model: Model, adam: AdamState, config: TrainConfig) -> Self {
        Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            adam,
            config,
            last_finite_loss: f64::INFINITY,
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.adam
    }

    pub fn steps_taken(&self) -> u64 {
        self.adam.step
    }

    /// Runs one epoch: shuffle, minibatch sweep, one Adam step per batch.
    /// Returns the mean training MSE over the epoch.
    pub fn run_epoch(&mut self, dataset: &WindowedDataset) -> Result<f64, ModelError> {
        if dataset.task != *self.model.task() {
            return Err(ModelError::DatasetMismatch {
                detail: format!(
                    "model is for task '{}', dataset is '{}'",
                    self.model.task().name,
                    dataset.task.name
                ),
            });
        }
        if dataset.is_empty() {
            return Err(ModelError::DatasetMismatch {
                detail: "dataset has no samples".into(),
            });
        }

        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.rng);

        let mut epoch_loss_sum = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let batch_len = batch.len() as f64;
            let groups: Vec<&[usize]> = batch.chunks(GROUP).collect();
            let results: Vec<Result<(f64, Vec<Tensor>), ModelError>> = groups
                .par_iter()
                .map(|group| group_loss_and_grads(&self.model, dataset, group))
                .collect();

            // Ordered reduction: group sums are added in group order.
            let mut loss_sum = 0.0;
            let mut grads: Option<Vec<Tensor>> = None;
            for result in results {
                let (group_loss, group_grads) = result?;
                loss_sum += group_loss;
                match &mut grads {
                    None => grads = Some(group_grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&group_grads) {
                            for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                                *av += gv;
                            }
                        }
                    }
                }
            }
            let mut grads = grads.expect("batch is non-empty");
            for g in &mut grads {
                for v in g.data_mut() {
                    *v /= batch_len;
                }
            }

            let batch_loss = loss_sum / batch_len;
            if !batch_loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    step: self.adam.step + 1,
                    last_finite: self.last_finite_loss,
                });
            }
            self.last_finite_loss = batch_loss;
            epoch_loss_sum += loss_sum;

            let names = self.model.param_names();
            let mut params = self.model.params_mut();
            let mut named: Vec<(&str, &mut Tensor)> = names
                .iter()
                .map(|n| n.as_str())
                .zip(params.iter_mut().map(|p| &mut **p))
                .collect();
            self.adam.step(&mut named, &grads)?;
        }
        Ok(epoch_loss_sum / dataset.len() as f64)
    }

    /// Packages the current state into a checkpoint.
    pub fn checkpoint(&self, stats: ScalingStats) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            adam: self.adam.clone(),
            stats,
            seed: self.config.seed,
        }
    }

    pub fn into_model(self) -> Model {
        self.model
    }
}

/// Sum of per-sample MSE losses and gradients over one group, computed on a
/// single tape with parameters registered once.
fn group_loss_and_grads(
    model: &Model,
    dataset: &WindowedDataset,
    group: &[usize],
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut total: Option<crate::tensor::tape::VarId> = None;
    for &i in group {
        let x = tape.leaf(dataset.inputs[i].clone());
        let target = tape.leaf(dataset.labels[i].clone());
        let out = model.forward_bound(&mut tape, &bound, x)?;
        let loss = mse_loss(&mut tape, out, target)?;
        total = Some(match total {
            None => loss,
            Some(t) => tape.add(t, loss)?,
        });
    }
    let total = total.expect("group is non-empty");
    let loss_value = tape.value(total).item()?;
    let grad_map = tape.backward(total)?;
    let grads: Vec<Tensor> = bound
        .ordered()
        .iter()
        .map(|&v| grad_map.get(v).expect("parameter gradient").clone())
        .collect();
    Ok((loss_value, grads))
}

/// Trains a fresh model for `config.epochs` epochs and returns the checkpoint
/// plus the per-epoch mean training loss.
pub fn train(
    model: Model,
    dataset: &WindowedDataset,
    config: TrainConfig,
) -> Result<(Checkpoint, Vec<f64>), ModelError> {
    let mut trainer = Trainer::new(model, config);
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        history.push(trainer.run_epoch(dataset)?);
    }
    let stats = dataset.stats;
    Ok((trainer.checkpoint(stats), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::matrix_from_fn;
    use crate::data::{make_windows, ScalingStats};
    use crate::model::{build_model, ModelSpec, TaskSpec};
    use rand::Rng;

    fn tiny_task() -> TaskSpec {
        TaskSpec::new("tiny", 1, 8, 8)
    }

    fn tiny_cnn_spec() -> ModelSpec {
        ModelSpec::Cnn {
            conv_channels: [4, 4, 4],
            seed: 11,
        }
    }

    fn noise_dataset(labels_value: f64, rows: usize) -> WindowedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise: Vec<f64> = (0..rows * 8).map(|_| rng.random_range(10.0..90.0)).collect();
        let matrix = matrix_from_fn(rows, 8, |r, c| noise[r * 8 + c], |_, _| false);
        let stats = ScalingStats { min: 0.0, max: 100.0 };
        let mut ds = make_windows(&matrix, &tiny_task(), &stats).unwrap();
        for label in &mut ds.labels {
            for v in label.data_mut() {
                *v = stats.scale(labels_value);
            }
        }
        ds
    }

    #[test]
    fn zero_epochs_leaves_initialization_untouched() {
        let model = build_model(&tiny_cnn_spec(), &tiny_task()).unwrap();
        let fresh = build_model(&tiny_cnn_spec(), &tiny_task()).unwrap();
        let ds = noise_dataset(50.0, 40);
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (ckpt, history) = train(model, &ds, config).unwrap();
        assert!(history.is_empty());
        for (a, b) in ckpt.model.params().iter().zip(fresh.params().iter()) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(ckpt.adam.step, 0);
    }

    #[test]
    fn constant_targets_are_learned_to_the_mean() {
        // Labels fixed at 0.5 in scaled space while inputs are pure noise:
        // the MSE minimizer is the constant 0.5, reachable through the bias.
        let model = build_model(&tiny_cnn_spec(), &tiny_task()).unwrap();
        let ds = noise_dataset(50.0, 60);
        let config = TrainConfig {
            epochs: 40,
            batch_size: 16,
            adam: AdamConfig {
                lr0: 0.02,
                decay: 1.0,
                ..AdamConfig::default()
            },
            seed: 7,
        };
        let (ckpt, history) = train(model, &ds, config).unwrap();
        assert!(history.last().unwrap() < &history[0]);

        // Held-out noise inputs must predict ≈ 0.5 (scaled), i.e. 50 km/h.
        let holdout = noise_dataset(50.0, 30);
        let (preds, _) = crate::model::predict_dataset(&ckpt.model, &holdout).unwrap();
        for p in preds {
            assert!((p - 50.0).abs() < 2.0, "prediction {p} strays from the target mean");
        }
    }

    #[test]
    fn single_sample_step_decreases_its_loss_at_tiny_lr() {
        let task = tiny_task();
        let model = build_model(&tiny_cnn_spec(), &task).unwrap();
        let ds = noise_dataset(30.0, 12);
        let single = WindowedDataset {
            inputs: vec![ds.inputs[0].clone()],
            labels: vec![ds.labels[0].clone()],
            stats: ds.stats,
            task: task.clone(),
        };
        let loss_of = |m: &Model| {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape);
            let x = tape.leaf(single.inputs[0].clone());
            let t = tape.leaf(single.labels[0].clone());
            let out = m.forward_bound(&mut tape, &bound, x).unwrap();
            let l = mse_loss(&mut tape, out, t).unwrap();
            tape.value(l).item().unwrap()
        };
        let before = loss_of(&model);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 1,
            adam: AdamConfig {
                lr0: 1e-6,
                decay: 1.0,
                ..AdamConfig::default()
            },
            seed: 3,
        };
        let (ckpt, _) = train(model, &single, config).unwrap();
        let after = loss_of(&ckpt.model);
        assert!(after < before, "loss did not decrease: {before} -> {after}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let ds = noise_dataset(40.0, 50);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 8,
            adam: AdamConfig::default(),
            seed: 21,
        };
        let run = || {
            let model = build_model(&tiny_cnn_spec(), &tiny_task()).unwrap();
            let (ckpt, history) = train(model, &ds, config).unwrap();
            (ckpt, history)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(ha, hb);
        for (x, y) in a.model.params().iter().zip(b.model.params().iter()) {
            assert_eq!(x.data(), y.data());
        }
        for (x, y) in a.adam.first_moment.iter().zip(&b.adam.first_moment) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        // Gradient groups are fixed-size, so the reduction order is pinned
        // whatever pool executes the groups.
        let ds = noise_dataset(35.0, 40);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 12,
            adam: AdamConfig::default(),
            seed: 5,
        };
        let run_with_threads = |n: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            pool.install(|| {
                let model = build_model(&tiny_cnn_spec(), &tiny_task()).unwrap();
                let (ckpt, history) = train(model, &ds, config).unwrap();
                (ckpt, history)
            })
        };
        let (a, ha) = run_with_threads(1);
        let (b, hb) = run_with_threads(4);
        assert_eq!(ha, hb);
        for (x, y) in a.model.params().iter().zip(b.model.params().iter()) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn dataset_task_mismatch_is_rejected() {
        let model = build_model(&tiny_cnn_spec(), &tiny_task()).unwrap();
        let other = TaskSpec::new("other", 1, 9, 8);
        let matrix = matrix_from_fn(30, 8, |r, c| (r + c) as f64, |_, _| false);
        let stats = ScalingStats { min: 0.0, max: 100.0 };
        let ds = make_windows(&matrix, &other, &stats).unwrap();
        let mut trainer = Trainer::new(model, TrainConfig::default());
        assert!(matches!(
            trainer.run_epoch(&ds),
            Err(ModelError::DatasetMismatch { .. })
        ));
    }
}
