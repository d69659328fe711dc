//! Model hyperparameters and derived shape arithmetic.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataset::MAX_ATOMS;

/// Fixed stride of every prediction-head conv layer.
pub const CONV_STRIDE: usize = 2;

/// Length of the prediction-head input sequence: one position per atom slot
/// plus one for the pooled graph-level vector.
pub const HEAD_SEQ_LEN: usize = MAX_ATOMS + 1;

/// Global pooling flavor for the graph-level representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Mean,
}

/// Network hyperparameters.
///
/// The token width `d_model` must equal `d_k * heads`, and the final GCN
/// width must equal `d_model` so atom tokens and omics tokens share a space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Token width shared by atom states and omics tokens.
    pub d_model: usize,
    /// Parallel attention heads per AOA layer.
    pub heads: usize,
    /// Per-head query/key width.
    pub d_k: usize,
    /// Number of transformer blocks in the interaction module.
    pub n_blocks: usize,
    /// Output width of each GCN layer; the last must be `d_model`.
    pub gcn_layer_widths: Vec<usize>,
    /// Hidden widths of each omics encoder (the final affine to `d_model`
    /// is implicit).
    pub omics_hidden: Vec<usize>,
    /// Feed-forward inner width inside each transformer block.
    pub ff_inner: usize,
    /// Output channels of the successive prediction-head conv layers.
    pub conv_channels: Vec<usize>,
    /// Kernel width shared by the conv layers.
    pub conv_kernel: usize,
    /// Inverted-dropout rate applied after each conv activation.
    pub dropout_rate: f64,
    /// Global pooling flavor.
    pub pool: PoolKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 200,
            heads: 2,
            d_k: 100,
            n_blocks: 2,
            gcn_layer_widths: vec![128, 128, 200],
            omics_hidden: vec![256],
            ff_inner: 512,
            conv_channels: vec![32, 16],
            conv_kernel: 3,
            dropout_rate: 0.1,
            pool: PoolKind::Max,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: String| Err(ModelError::Config(reason));
        if self.d_model == 0 || self.heads == 0 || self.d_k == 0 {
            return bad("d_model, heads, and d_k must be positive".into());
        }
        if self.d_model != self.d_k * self.heads {
            return bad(format!(
                "d_model ({}) must equal d_k * heads ({} * {})",
                self.d_model, self.d_k, self.heads
            ));
        }
        match self.gcn_layer_widths.last() {
            None => return bad("gcn_layer_widths must not be empty".into()),
            Some(&last) if last != self.d_model => {
                return bad(format!(
                    "final GCN width ({last}) must equal d_model ({})",
                    self.d_model
                ));
            }
            _ => {}
        }
        if self.gcn_layer_widths.contains(&0)
            || self.omics_hidden.contains(&0)
            || self.conv_channels.contains(&0)
        {
            return bad("layer widths must be positive".into());
        }
        if self.ff_inner == 0 {
            return bad("ff_inner must be positive".into());
        }
        if self.conv_kernel == 0 {
            return bad("conv_kernel must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        self.conv_lengths()?;
        Ok(())
    }

    /// Sequence length after each conv layer, starting from `HEAD_SEQ_LEN`.
    pub fn conv_lengths(&self) -> Result<Vec<usize>, ModelError> {
        let mut len = HEAD_SEQ_LEN;
        let mut lengths = Vec::with_capacity(self.conv_channels.len());
        for (i, _) in self.conv_channels.iter().enumerate() {
            if len < self.conv_kernel {
                return Err(ModelError::Config(format!(
                    "conv layer {i}: sequence length {len} shorter than kernel {}",
                    self.conv_kernel
                )));
            }
            len = (len - self.conv_kernel) / CONV_STRIDE + 1;
            lengths.push(len);
        }
        Ok(lengths)
    }

    /// Flattened width feeding the final affine layer.
    pub fn head_input_width(&self) -> Result<usize, ModelError> {
        let lengths = self.conv_lengths()?;
        Ok(match (self.conv_channels.last(), lengths.last()) {
            (Some(&c), Some(&l)) => c * l,
            _ => self.d_model * HEAD_SEQ_LEN,
        })
    }
}
