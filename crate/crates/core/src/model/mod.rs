//! The TCR network.
//!
//! A drug enters as a padded molecular graph and is encoded by a GCN into
//! per-atom states; a cell line enters as three omics vectors, each encoded
//! by its own fully connected stack into one token. Transformer blocks then
//! let every atom attend over the three omics tokens (atom-omics
//! attention), and a 1D-convolutional head over the atom sequence plus the
//! pooled graph-level vector regresses ln IC50.
//!
//! Parameters live in a path-addressed registry ([`ModelParams`]) so the
//! optimizer, gradient checks, and [`Checkpoint`] files all name tensors
//! the same way.

mod checkpoint;
mod config;
mod net;
mod params;

pub use checkpoint::{AdamSnapshot, Checkpoint, TensorEntry, CHECKPOINT_VERSION};
pub use config::{ModelConfig, PoolKind, CONV_STRIDE, HEAD_SEQ_LEN};
pub use net::{
    aoa_attention, forward_batch, gcn_forward, global_pool, omics_encode, predict_eval,
    transformer_block, BatchForward,
};
pub use params::{BoundParams, ModelParams};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("no parameter registered at {0}")]
    MissingParameter(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
