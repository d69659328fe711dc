//! Training: the dual regression/ranking objective, cross-sampled pair
//! batches, and the Adam loop that ties them together.
//!
//! A training step samples [`PairBatch`] anchors that share a drug or a cell
//! line with their partner, runs one batched forward pass over the unique
//! records, computes `L = beta * L_MSE + (1 - beta) * L_rank`, backpropagates,
//! and applies a bias-corrected Adam update to every registered parameter.
//! [`fit`] drives that step loop deterministically from a single seed and
//! records per-step loss components.

mod adam;
mod fit;
mod loss;
mod sampler;

pub use adam::adam_step;
pub use fit::{fit, write_loss_history, FitReport, LossRecord};
pub use loss::{combined_loss, rank_label, rank_loss, LossParts};
pub use sampler::{cross_sample_batch, PairAxis, PairBatch};

use crate::model::ModelError;
use crate::tensor::TensorError;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),

    #[error("cannot sample pairs: {0}")]
    Sampling(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("loss diverged to a non-finite value at step {step}")]
    Diverged { step: u64 },

    #[error("model error: {0}")]
    Model(#[from] ModelError),

    #[error("tensor error: {0}")]
    Tensor(#[from] TensorError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Derives an independent child seed for job `salt` (fold index, sweep
/// point) from a root seed, via one SplitMix64 round. Children of distinct
/// salts drive unrelated rng streams while staying reproducible.
pub fn derive_seed(root: u64, salt: u64) -> u64 {
    let mut z = root.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hyper-parameters of the training loop.
///
/// Defaults follow the reference setup: `beta = 0.9`, zero margin, Adam at
/// `1e-4` with the usual moment decays, and batches of 32 anchor-partner
/// pairs mixed evenly between drug-sharing and cell-sharing partners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Mixing coefficient: `L = beta * L_MSE + (1 - beta) * L_rank`.
    pub beta: f64,
    /// Hinge margin of the pairwise ranking loss.
    pub margin: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Anchor-partner pairs drawn per step; the forward batch holds the
    /// unique records among them (at most `2 * batch_pairs`).
    pub batch_pairs: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Probability that a partner is drawn from the anchor's drug rather
    /// than its cell line.
    pub rank_pair_axis_mix: f64,
    /// Optional early stop: finish as soon as a step's batch MSE drops
    /// below this threshold.
    pub stop_at_train_mse: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 0.9,
            margin: 0.0,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_pairs: 32,
            epochs: 1,
            seed: 0,
            rank_pair_axis_mix: 0.5,
            stop_at_train_mse: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(TrainError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.beta) {
            return err("beta must lie in [0, 1]");
        }
        if self.margin.is_nan() || self.margin < 0.0 {
            return err("margin must be nonnegative");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return err("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return err("adam moment decays must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return err("adam_eps must be positive");
        }
        if self.batch_pairs == 0 {
            return err("batch_pairs must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.rank_pair_axis_mix) {
            return err("rank_pair_axis_mix must lie in [0, 1]");
        }
        if let Some(t) = self.stop_at_train_mse {
            if t.is_nan() || t <= 0.0 {
                return err("stop_at_train_mse must be positive");
            }
        }
        Ok(())
    }
}
