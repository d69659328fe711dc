//! Versioned JSON checkpoints that round-trip bitwise.
//!
//! Every trainable tensor is stored as registry path -> shape + flat f64
//! array, alongside batch-norm running stats and (optionally) Adam moments,
//! so a resumed run continues exactly where the saved one stopped.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams};
use crate::tensor::{BatchNormState, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Adam accumulator snapshot, keyed like the parameter registry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamSnapshot {
    /// Completed update steps (the bias-correction exponent).
    pub step: u64,
    pub first_moment: BTreeMap<String, Vec<f64>>,
    pub second_moment: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub omics_dims: (usize, usize, usize),
    pub tensors: BTreeMap<String, TensorEntry>,
    pub bn_states: BTreeMap<String, BatchNormState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamSnapshot>,
}

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, reason: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, optimizer: Option<AdamSnapshot>) -> Self {
        let tensors = params
            .tensors
            .iter()
            .map(|(path, t)| {
                (
                    path.clone(),
                    TensorEntry {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            config: params.config.clone(),
            omics_dims: params.omics_dims,
            tensors,
            bn_states: params.bn_states.clone(),
            optimizer,
        }
    }

    /// Reconstructs parameters, verifying every entry against the registry
    /// the stored config would create.
    pub fn into_params(self) -> Result<(ModelParams, Option<AdamSnapshot>), ModelError> {
        let mismatch = |reason: String| ModelError::Checkpoint {
            path: "<in-memory>".into(),
            reason,
        };
        // The reference registry defines the expected paths and shapes.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let reference = ModelParams::init(&self.config, self.omics_dims, &mut rng)?;
        if self.tensors.len() != reference.tensors.len() {
            return Err(mismatch(format!(
                "{} tensors stored, config defines {}",
                self.tensors.len(),
                reference.tensors.len()
            )));
        }
        let mut tensors = BTreeMap::new();
        for (path, expected) in &reference.tensors {
            let entry = self
                .tensors
                .get(path)
                .ok_or_else(|| mismatch(format!("missing tensor {path}")))?;
            if entry.shape != expected.shape() {
                return Err(mismatch(format!(
                    "tensor {path} has shape {:?}, config requires {:?}",
                    entry.shape,
                    expected.shape()
                )));
            }
            let t = Tensor::new(entry.shape.clone(), entry.data.clone())
                .map_err(|e| mismatch(format!("tensor {path}: {e}")))?;
            if !t.is_finite() {
                return Err(mismatch(format!("tensor {path} holds non-finite values")));
            }
            tensors.insert(path.clone(), t);
        }
        for (path, expected) in &reference.bn_states {
            let got = self
                .bn_states
                .get(path)
                .ok_or_else(|| mismatch(format!("missing batch-norm state {path}")))?;
            if got.running_mean.len() != expected.running_mean.len() {
                return Err(mismatch(format!(
                    "batch-norm state {path} has width {}, config requires {}",
                    got.running_mean.len(),
                    expected.running_mean.len()
                )));
            }
        }
        Ok((
            ModelParams {
                config: self.config,
                omics_dims: self.omics_dims,
                tensors,
                bn_states: self.bn_states,
            },
            self.optimizer,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self).map_err(|e| bad(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| bad(path, e))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(bad(
                path,
                format!(
                    "version {} unsupported (expected {CHECKPOINT_VERSION})",
                    ckpt.version
                ),
            ));
        }
        Ok(ckpt)
    }
}
