//! Model assembly: task geometry, the two architectures, parameter counting,
//! training, prediction, and checkpoints.

mod checkpoint;
mod train;

pub use checkpoint::Checkpoint;
pub use train::{train, TrainConfig, Trainer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capsule::{capsule_lengths, dynamic_routing, PrimaryCapsLayer, TrafficCapsLayer};
use crate::data::WindowedDataset;
use crate::layers::{AdamError, Conv2DLayer, DenseLayer, PaddingKind};
use crate::tensor::tape::{Tape, VarId};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("geometry: {detail}")]
    Geometry { detail: String },
    #[error("dataset mismatch: {detail}")]
    DatasetMismatch { detail: String },
    #[error("training aborted at step {step}: non-finite loss (last finite loss {last_finite})")]
    NonFiniteLoss { step: u64, last_finite: f64 },
    #[error("checkpoint: {detail}")]
    Checkpoint { detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Adam(#[from] AdamError),
}

/// Prediction task geometry: forecast `horizon` steps ahead from `history`
/// steps of context over `segments` road segments. The input image is
/// `history × segments`; the label vector has `horizon · segments` entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// L: steps predicted ahead.
    pub horizon: usize,
    /// M: history steps in the input image.
    pub history: usize,
    /// N: road segments (sensors).
    pub segments: usize,
}

impl TaskSpec {
    pub fn new(name: &str, horizon: usize, history: usize, segments: usize) -> Self {
        TaskSpec {
            name: name.to_string(),
            horizon,
            history,
            segments,
        }
    }

    /// The four built-in task geometries.
    pub fn builtin() -> [TaskSpec; 4] {
        [
            TaskSpec::new("task1", 1, 10, 20),
            TaskSpec::new("task2", 2, 10, 20),
            TaskSpec::new("task3", 1, 14, 50),
            TaskSpec::new("task4", 2, 14, 50),
        ]
    }

    pub fn by_name(name: &str) -> Option<TaskSpec> {
        TaskSpec::builtin().into_iter().find(|t| t.name == name)
    }

    pub fn label_len(&self) -> usize {
        self.horizon * self.segments
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.horizon < 1 || self.history < 1 || self.segments < 1 {
            return Err(ModelError::Geometry {
                detail: format!(
                    "task '{}' needs positive horizon/history/segments, got {}/{}/{}",
                    self.name, self.horizon, self.history, self.segments
                ),
            });
        }
        Ok(())
    }
}

/// Architecture description. `Cnn` is the three conv/pool stages plus a
/// linear readout; `Capsnet` is two plain convolutions, a primary capsule
/// stage, and an output capsule per (horizon step, segment) read out by
/// vector length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Cnn {
        /// Channels of the three convolution stages.
        conv_channels: [usize; 3],
        seed: u64,
    },
    Capsnet {
        /// Channels of the leading plain convolutions.
        conv_channels: Vec<usize>,
        /// Channels of the primary capsule convolution.
        primary_channels: usize,
        /// Dimension of a primary capsule.
        primary_capsule_dim: usize,
        /// Dimension of an output capsule.
        output_capsule_dim: usize,
        routing_iterations: usize,
        seed: u64,
    },
}

impl ModelSpec {
    /// The standard CNN: 256/128/64 channels of 3×3 kernels.
    pub fn cnn(seed: u64) -> Self {
        ModelSpec::Cnn {
            conv_channels: [256, 128, 64],
            seed,
        }
    }

    /// The standard capsule network: two 32-channel convolutions, a
    /// 128-channel primary stage of 8-dimensional capsules, 16-dimensional
    /// output capsules, 3 routing iterations.
    pub fn capsnet(seed: u64) -> Self {
        ModelSpec::Capsnet {
            conv_channels: vec![32, 32],
            primary_channels: 128,
            primary_capsule_dim: 8,
            output_capsule_dim: 16,
            routing_iterations: 3,
            seed,
        }
    }

    /// Width-reduced capsule network for desk-scale runs: 8-channel
    /// convolutions and a 16-channel primary stage (two capsule types per
    /// position) with the same capsule dimensions and routing depth.
    pub fn capsnet_reduced(seed: u64) -> Self {
        ModelSpec::Capsnet {
            conv_channels: vec![8, 8],
            primary_channels: 16,
            primary_capsule_dim: 8,
            output_capsule_dim: 16,
            routing_iterations: 3,
            seed,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::Cnn { .. } => "cnn",
            ModelSpec::Capsnet { .. } => "capsnet",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelSpec::Cnn { seed, .. } | ModelSpec::Capsnet { seed, .. } => *seed,
        }
    }

    pub fn with_seed(mut self, new_seed: u64) -> Self {
        match &mut self {
            ModelSpec::Cnn { seed, .. } | ModelSpec::Capsnet { seed, .. } => *seed = new_seed,
        }
        self
    }

    /// Exact trainable-parameter count for this architecture on a task,
    /// computed from the layer arithmetic without materializing tensors.
    pub fn parameter_count(&self, task: &TaskSpec) -> Result<usize, ModelError> {
        task.validate()?;
        match self {
            ModelSpec::Cnn { conv_channels, .. } => {
                let (h, w) = cnn_pooled_extent(task)?;
                let mut total = 0usize;
                let mut c_in = 1usize;
                for &c_out in conv_channels {
                    total += c_out * (9 * c_in) + c_out;
                    c_in = c_out;
                }
                let flat = h * w * c_in;
                total += flat * task.label_len() + task.label_len();
                Ok(total)
            }
            ModelSpec::Capsnet {
                conv_channels,
                primary_channels,
                primary_capsule_dim,
                output_capsule_dim,
                ..
            } => {
                let mut total = 0usize;
                let mut c_in = 1usize;
                for &c_out in conv_channels {
                    total += c_out * (9 * c_in) + c_out;
                    c_in = c_out;
                }
                total += primary_channels * (9 * c_in) + primary_channels;
                if *primary_capsule_dim == 0 || !primary_channels.is_multiple_of(*primary_capsule_dim) {
                    return Err(ModelError::Geometry {
                        detail: format!(
                            "{primary_channels} primary channels do not divide into capsules of dimension {primary_capsule_dim}"
                        ),
                    });
                }
                let types = primary_channels / primary_capsule_dim;
                let num_in = task.history * task.segments * types;
                let num_out = task.label_len();
                total += num_in * num_out * primary_capsule_dim * output_capsule_dim;
                Ok(total)
            }
        }
    }
}

/// Spatial extent after the three halving pools, or an error naming the
/// minimum when a dimension collapses.
fn cnn_pooled_extent(task: &TaskSpec) -> Result<(usize, usize), ModelError> {
    let (mut h, mut w) = (task.history, task.segments);
    if h < 8 || w < 8 {
        return Err(ModelError::Geometry {
            detail: format!(
                "the CNN pools halve the image three times, so history and segments must both be at least 8; task '{}' has {}x{}",
                task.name, task.history, task.segments
            ),
        });
    }
    for _ in 0..3 {
        h /= 2;
        w /= 2;
    }
    Ok((h, w))
}

/// A built model: layers with materialized parameters, ready to run.
#[derive(Debug, Clone)]
pub enum Model {
    Cnn(CnnModel),
    Capsnet(CapsnetModel),
}

#[derive(Debug, Clone)]
pub struct CnnModel {
    pub spec: ModelSpec,
    pub task: TaskSpec,
    pub convs: Vec<Conv2DLayer>,
    pub dense: DenseLayer,
}

#[derive(Debug, Clone)]
pub struct CapsnetModel {
    pub spec: ModelSpec,
    pub task: TaskSpec,
    pub convs: Vec<Conv2DLayer>,
    pub primary: PrimaryCapsLayer,
    pub traffic: TrafficCapsLayer,
}

/// Parameter variables registered on one tape, in canonical order.
pub struct BoundModel {
    conv_vars: Vec<(VarId, VarId)>,
    dense_vars: Option<(VarId, VarId)>,
    primary_vars: Option<(VarId, VarId)>,
    transform_var: Option<VarId>,
}

impl BoundModel {
    /// Variables in the same order as [`Model::param_names`].
    pub fn ordered(&self) -> Vec<VarId> {
        let mut vars = Vec::new();
        for &(k, b) in &self.conv_vars {
            vars.push(k);
            vars.push(b);
        }
        if let Some((k, b)) = self.primary_vars {
            vars.push(k);
            vars.push(b);
        }
        if let Some(w) = self.transform_var {
            vars.push(w);
        }
        if let Some((w, b)) = self.dense_vars {
            vars.push(w);
            vars.push(b);
        }
        vars
    }
}

/// Builds a ready model from an architecture spec and a task, initializing
/// every tensor from the spec's seed.
pub fn build_model(spec: &ModelSpec, task: &TaskSpec) -> Result<Model, ModelError> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
    match spec {
        ModelSpec::Cnn { conv_channels, .. } => {
            let (h, w) = cnn_pooled_extent(task)?;
            let mut convs = Vec::new();
            let mut c_in = 1usize;
            for &c_out in conv_channels {
                convs.push(Conv2DLayer::init(c_out, 3, 3, c_in, 1, PaddingKind::Same, &mut rng));
                c_in = c_out;
            }
            let dense = DenseLayer::init(h * w * c_in, task.label_len(), &mut rng);
            Ok(Model::Cnn(CnnModel {
                spec: spec.clone(),
                task: task.clone(),
                convs,
                dense,
            }))
        }
        ModelSpec::Capsnet {
            conv_channels,
            primary_channels,
            primary_capsule_dim,
            output_capsule_dim,
            routing_iterations,
            ..
        } => {
            if *routing_iterations < 1 {
                return Err(ModelError::Geometry {
                    detail: "the capsule network needs at least one routing iteration".into(),
                });
            }
            let mut convs = Vec::new();
            let mut c_in = 1usize;
            for &c_out in conv_channels {
                convs.push(Conv2DLayer::init(c_out, 3, 3, c_in, 1, PaddingKind::Same, &mut rng));
                c_in = c_out;
            }
            let primary = PrimaryCapsLayer::init(*primary_channels, c_in, *primary_capsule_dim, &mut rng)
                .map_err(ModelError::Tensor)?;
            let num_in = primary.capsule_count(task.history, task.segments);
            let traffic = TrafficCapsLayer::init(
                num_in,
                task.label_len(),
                *primary_capsule_dim,
                *output_capsule_dim,
                *routing_iterations,
                &mut rng,
            );
            Ok(Model::Capsnet(CapsnetModel {
                spec: spec.clone(),
                task: task.clone(),
                convs,
                primary,
                traffic,
            }))
        }
    }
}

/// Same layer geometry as [`build_model`] with zero-filled tensors; used when
/// loading checkpoints.
pub(crate) fn build_model_zeroed(spec: &ModelSpec, task: &TaskSpec) -> Result<Model, ModelError> {
    task.validate()?;
    match spec {
        ModelSpec::Cnn { conv_channels, .. } => {
            let (h, w) = cnn_pooled_extent(task)?;
            let mut convs = Vec::new();
            let mut c_in = 1usize;
            for &c_out in conv_channels {
                convs.push(Conv2DLayer::zeroed(c_out, 3, 3, c_in, 1, PaddingKind::Same));
                c_in = c_out;
            }
            let dense = DenseLayer::zeroed(h * w * c_in, task.label_len());
            Ok(Model::Cnn(CnnModel {
                spec: spec.clone(),
                task: task.clone(),
                convs,
                dense,
            }))
        }
        ModelSpec::Capsnet {
            conv_channels,
            primary_channels,
            primary_capsule_dim,
            output_capsule_dim,
            routing_iterations,
            ..
        } => {
            let mut convs = Vec::new();
            let mut c_in = 1usize;
            for &c_out in conv_channels {
                convs.push(Conv2DLayer::zeroed(c_out, 3, 3, c_in, 1, PaddingKind::Same));
                c_in = c_out;
            }
            let primary = PrimaryCapsLayer::zeroed(*primary_channels, c_in, *primary_capsule_dim);
            let num_in = primary.capsule_count(task.history, task.segments);
            let traffic = TrafficCapsLayer::zeroed(
                num_in,
                task.label_len(),
                *primary_capsule_dim,
                *output_capsule_dim,
                *routing_iterations,
            );
            Ok(Model::Capsnet(CapsnetModel {
                spec: spec.clone(),
                task: task.clone(),
                convs,
                primary,
                traffic,
            }))
        }
    }
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        match self {
            Model::Cnn(m) => &m.spec,
            Model::Capsnet(m) => &m.spec,
        }
    }

    pub fn task(&self) -> &TaskSpec {
        match self {
            Model::Cnn(m) => &m.task,
            Model::Capsnet(m) => &m.task,
        }
    }

    /// Stable parameter names, matching the order of [`Model::params`],
    /// [`Model::params_mut`], and [`BoundModel::ordered`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        match self {
            Model::Cnn(m) => {
                for i in 0..m.convs.len() {
                    names.push(format!("conv{}.kernels", i + 1));
                    names.push(format!("conv{}.bias", i + 1));
                }
                names.push("dense.weights".into());
                names.push("dense.bias".into());
            }
            Model::Capsnet(m) => {
                for i in 0..m.convs.len() {
                    names.push(format!("conv{}.kernels", i + 1));
                    names.push(format!("conv{}.bias", i + 1));
                }
                names.push("primary.kernels".into());
                names.push("primary.bias".into());
                names.push("traffic.transforms".into());
            }
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut params: Vec<&Tensor> = Vec::new();
        match self {
            Model::Cnn(m) => {
                for conv in &m.convs {
                    params.push(&conv.kernels);
                    params.push(&conv.bias);
                }
                params.push(&m.dense.weights);
                params.push(&m.dense.bias);
            }
            Model::Capsnet(m) => {
                for conv in &m.convs {
                    params.push(&conv.kernels);
                    params.push(&conv.bias);
                }
                params.push(&m.primary.conv.kernels);
                params.push(&m.primary.conv.bias);
                params.push(&m.traffic.transforms);
            }
        }
        params
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut params: Vec<&mut Tensor> = Vec::new();
        match self {
            Model::Cnn(m) => {
                for conv in &mut m.convs {
                    params.push(&mut conv.kernels);
                    params.push(&mut conv.bias);
                }
                params.push(&mut m.dense.weights);
                params.push(&mut m.dense.bias);
            }
            Model::Capsnet(m) => {
                for conv in &mut m.convs {
                    params.push(&mut conv.kernels);
                    params.push(&mut conv.bias);
                }
                params.push(&mut m.primary.conv.kernels);
                params.push(&mut m.primary.conv.bias);
                params.push(&mut m.traffic.transforms);
            }
        }
        params
    }

    /// Exact count of trainable scalars in the materialized tensors.
    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Registers every parameter on the tape once.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        match self {
            Model::Cnn(m) => BoundModel {
                conv_vars: m.convs.iter().map(|c| c.bind(tape)).collect(),
                dense_vars: Some(m.dense.bind(tape)),
                primary_vars: None,
                transform_var: None,
            },
            Model::Capsnet(m) => BoundModel {
                conv_vars: m.convs.iter().map(|c| c.bind(tape)).collect(),
                dense_vars: None,
                primary_vars: Some(m.primary.bind(tape)),
                transform_var: Some(m.traffic.bind(tape)),
            },
        }
    }

    /// Forward pass over bound parameters: a scaled `history × segments`
    /// image in, a scaled prediction vector of length `horizon · segments`
    /// out.
    pub fn forward_bound(&self, tape: &mut Tape, bound: &BoundModel, input: VarId) -> Result<VarId, ModelError> {
        let task = self.task();
        let got = tape.shape(input).to_vec();
        if got != [task.history, task.segments] {
            return Err(ModelError::Geometry {
                detail: format!(
                    "input image is {got:?} but task '{}' expects [{}, {}]",
                    task.name, task.history, task.segments
                ),
            });
        }
        let image = tape.reshape(input, &[task.history, task.segments, 1])?;
        match self {
            Model::Cnn(m) => {
                let mut x = image;
                for (conv, &vars) in m.convs.iter().zip(&bound.conv_vars) {
                    let c = conv.apply(tape, vars, x)?;
                    let r = tape.relu(c);
                    x = tape.maxpool2x2(r)?;
                }
                let flat_len = tape.value(x).len();
                let flat = tape.reshape(x, &[flat_len])?;
                let dense_vars = bound.dense_vars.expect("cnn binding carries dense vars");
                Ok(m.dense.apply(tape, dense_vars, flat)?)
            }
            Model::Capsnet(m) => {
                let mut x = image;
                for (conv, &vars) in m.convs.iter().zip(&bound.conv_vars) {
                    let c = conv.apply(tape, vars, x)?;
                    x = tape.relu(c);
                }
                let primary_vars = bound.primary_vars.expect("capsnet binding carries primary vars");
                let capsules = m.primary.apply(tape, primary_vars, x)?;
                let transforms = bound.transform_var.expect("capsnet binding carries transforms");
                let u_hat = m.traffic.apply(tape, transforms, capsules)?;
                let (v, _) = dynamic_routing(tape, u_hat, m.traffic.routing_iterations)?;
                Ok(capsule_lengths(tape, v)?)
            }
        }
    }

    /// One-off forward pass on a private tape.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let bound = self.bind(&mut tape);
        let out = self.forward_bound(&mut tape, &bound, x)?;
        Ok(tape.value(out).clone())
    }
}

/// Model predictions and ground truth for a whole dataset, in km/h.
///
/// Raw network outputs are clamped to `[0, 1]` before inverse scaling; the
/// clamp only ever binds for the CNN, whose readout is unbounded. Work fans
/// out across worker threads in fixed-size chunks and is reassembled in
/// sample order, so the result does not depend on thread count.
pub fn predict_dataset(model: &Model, dataset: &WindowedDataset) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let task = model.task();
    if *task != dataset.task {
        return Err(ModelError::DatasetMismatch {
            detail: format!("model is for task '{}', dataset is '{}'", task.name, dataset.task.name),
        });
    }
    let stats = dataset.stats;
    let chunk = 16usize;
    let sample_indices: Vec<usize> = (0..dataset.len()).collect();
    let chunks: Vec<&[usize]> = sample_indices.chunks(chunk).collect();
    let results: Vec<Result<Vec<f64>, ModelError>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let mut preds = Vec::with_capacity(chunk.len() * task.label_len());
            for &i in chunk.iter() {
                let x = tape.leaf(dataset.inputs[i].clone());
                let out = model.forward_bound(&mut tape, &bound, x)?;
                preds.extend(
                    tape.value(out)
                        .data()
                        .iter()
                        .map(|&v| stats.unscale(v.clamp(0.0, 1.0))),
                );
            }
            Ok(preds)
        })
        .collect();

    let mut predictions = Vec::with_capacity(dataset.len() * task.label_len());
    for r in results {
        predictions.extend(r?);
    }
    let truths: Vec<f64> = dataset
        .labels
        .iter()
        .flat_map(|l| l.data().iter().map(|&v| stats.unscale(v)))
        .collect();
    Ok((predictions, truths))
}
