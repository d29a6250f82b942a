//! Single-file binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..8    magic "CAPSCKPT"
//! bytes 8..12   format version (u32, currently 1)
//! bytes 12..20  header length in bytes (u64)
//! [header]      JSON: model spec, task, optimizer config + step, scaling
//!               stats, run seed, and an ordered tensor directory
//!               ({name, shape} per tensor)
//! [buffers]     raw f64 little-endian tensor data, in directory order:
//!               every model parameter, then the Adam first moments
//!               ("adam.m.<param>"), then the second moments ("adam.v.<param>")
//! ```
//!
//! The body is written losslessly, so reloading reproduces predictions
//! bit-exactly. Loading validates the magic, version, directory names and
//! shapes, and rejects truncated or oversized files without constructing a
//! partial model.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model_zeroed, Model, ModelError, ModelSpec, TaskSpec};
use crate::data::ScalingStats;
use crate::layers::{AdamConfig, AdamState};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CAPSCKPT";
const FORMAT_VERSION: u32 = 1;
/// Upper bound on the JSON header; real headers are a few kilobytes.
const MAX_HEADER_LEN: u64 = 16 * 1024 * 1024;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_spec: ModelSpec,
    task: TaskSpec,
    adam: AdamConfig,
    adam_step: u64,
    stats: ScalingStats,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

/// Complete training state: model, optimizer, scaling statistics, run seed.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: AdamState,
    pub stats: ScalingStats,
    pub seed: u64,
}

impl Checkpoint {
    /// Optimizer steps taken when this checkpoint was written.
    pub fn train_step(&self) -> u64 {
        self.adam.step
    }

    fn tensor_directory(&self) -> (Vec<String>, Vec<&Tensor>) {
        let names = self.model.param_names();
        let params = self.model.params();
        let mut all_names = names.clone();
        all_names.extend(names.iter().map(|n| format!("adam.m.{n}")));
        all_names.extend(names.iter().map(|n| format!("adam.v.{n}")));
        let mut tensors: Vec<&Tensor> = params;
        tensors.extend(self.adam.first_moment.iter());
        tensors.extend(self.adam.second_moment.iter());
        (all_names, tensors)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let (names, tensors) = self.tensor_directory();
        let header = Header {
            model_spec: self.model.spec().clone(),
            task: self.model.task().clone(),
            adam: self.adam.config,
            adam_step: self.adam.step,
            stats: self.stats,
            seed: self.seed,
            tensors: names
                .iter()
                .zip(&tensors)
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint {
            detail: format!("cannot encode header: {e}"),
        })?;

        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        out.write_all(&header_bytes)?;
        for tensor in tensors {
            for v in tensor.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, ModelError> {
        let mut input = BufReader::new(File::open(path)?);
        let corrupt = |detail: String| ModelError::Checkpoint { detail };

        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| corrupt("file too short for the magic number".into()))?;
        if &magic != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        input
            .read_exact(&mut word)
            .map_err(|_| corrupt("truncated before the version field".into()))?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let mut long = [0u8; 8];
        input
            .read_exact(&mut long)
            .map_err(|_| corrupt("truncated before the header length".into()))?;
        let header_len = u64::from_le_bytes(long);
        if header_len > MAX_HEADER_LEN {
            return Err(corrupt(format!("header length {header_len} exceeds the format limit")));
        }
        let mut header_bytes = vec![0u8; header_len as usize];
        input
            .read_exact(&mut header_bytes)
            .map_err(|_| corrupt("truncated inside the header".into()))?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| corrupt(format!("cannot parse header: {e}")))?;

        let mut model = build_model_zeroed(&header.model_spec, &header.task)?;
        let param_names = model.param_names();
        let mut expected = param_names.clone();
        expected.extend(param_names.iter().map(|n| format!("adam.m.{n}")));
        expected.extend(param_names.iter().map(|n| format!("adam.v.{n}")));
        if header.tensors.len() != expected.len() {
            return Err(corrupt(format!(
                "directory lists {} tensors, architecture needs {}",
                header.tensors.len(),
                expected.len()
            )));
        }
        for (entry, name) in header.tensors.iter().zip(&expected) {
            if &entry.name != name {
                return Err(corrupt(format!(
                    "tensor directory mismatch: found '{}', expected '{}'",
                    entry.name, name
                )));
            }
        }

        let mut read_tensor = |shape: &[usize]| -> Result<Tensor, ModelError> {
            let len: usize = shape.iter().product();
            let mut buf = vec![0u8; len * 8];
            input
                .read_exact(&mut buf)
                .map_err(|_| corrupt("truncated tensor data".into()))?;
            let data: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::new(shape.to_vec(), data).map_err(ModelError::Tensor)
        };

        let n_params = param_names.len();
        {
            let mut params = model.params_mut();
            for (i, param) in params.iter_mut().enumerate() {
                let entry = &header.tensors[i];
                if entry.shape != param.shape() {
                    return Err(corrupt(format!(
                        "tensor '{}' has shape {:?}, architecture needs {:?}",
                        entry.name,
                        entry.shape,
                        param.shape()
                    )));
                }
                **param = read_tensor(&entry.shape)?;
            }
        }
        let mut first_moment = Vec::with_capacity(n_params);
        for entry in &header.tensors[n_params..2 * n_params] {
            first_moment.push(read_tensor(&entry.shape)?);
        }
        let mut second_moment = Vec::with_capacity(n_params);
        for entry in &header.tensors[2 * n_params..] {
            second_moment.push(read_tensor(&entry.shape)?);
        }

        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(corrupt("trailing bytes after the last tensor".into()));
        }

        Ok(Checkpoint {
            model,
            adam: AdamState {
                config: header.adam,
                step: header.adam_step,
                first_moment,
                second_moment,
            },
            stats: header.stats,
            seed: header.seed,
        })
    }

    /// Physical-unit prediction: takes a raw `history × segments` window in
    /// km/h, scales it with the stored statistics, runs the network, clamps
    /// the outputs to `[0, 1]`, and inverse-scales back to km/h. The result
    /// is ordered step-major: entry `(l-1)·segments + n` is segment `n` at
    /// horizon step `l`.
    pub fn predict(&self, window_kmh: &Tensor) -> Result<Tensor, ModelError> {
        let task = self.model.task();
        if window_kmh.shape() != [task.history, task.segments] {
            return Err(ModelError::Geometry {
                detail: format!(
                    "prediction window is {:?} but task '{}' expects [{}, {}]",
                    window_kmh.shape(),
                    task.name,
                    task.history,
                    task.segments
                ),
            });
        }
        let scaled = Tensor::new(
            window_kmh.shape().to_vec(),
            window_kmh.data().iter().map(|&v| self.stats.scale(v)).collect(),
        )?;
        let out = self.model.forward(&scaled)?;
        Ok(Tensor::new(
            out.shape().to_vec(),
            out.data().iter().map(|&v| self.stats.unscale(v.clamp(0.0, 1.0))).collect(),
        )?)
    }
}
