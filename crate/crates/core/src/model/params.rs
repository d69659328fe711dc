//! Named parameter registry with deterministic initialization.
//!
//! Every learnable tensor lives under a path like `block.0.attn.q.1` or
//! `gcn.2.weight`, so gradient checks, the optimizer, and checkpoints all
//! address parameters the same way. Batch-norm running statistics are kept
//! in a parallel map of non-trainable buffers.

use std::collections::BTreeMap;

use rand::Rng;

use super::{ModelConfig, ModelError};
use crate::dataset::ATOM_FEATURES;
use crate::tensor::{BatchNormState, Tape, Tensor, Var};

/// All model state: hyperparameters, trainable tensors, batch-norm buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// (mutation, expression, methylation) input widths.
    pub omics_dims: (usize, usize, usize),
    /// Trainable tensors addressed by registry path.
    pub tensors: BTreeMap<String, Tensor>,
    /// Non-trainable batch-norm running stats, one per conv layer.
    pub bn_states: BTreeMap<String, BatchNormState>,
}

/// Accumulates tensors in a fixed construction order so a seeded rng yields
/// reproducible initialization regardless of map iteration details.
struct Builder<'r, R: Rng> {
    rng: &'r mut R,
    tensors: BTreeMap<String, Tensor>,
}

impl<'r, R: Rng> Builder<'r, R> {
    /// Weight drawn from U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
    fn uniform(&mut self, path: String, shape: Vec<usize>, fan_in: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.insert(path, Tensor::new(shape, data).expect("init shape"));
    }

    fn constant(&mut self, path: String, shape: Vec<usize>, value: f64) {
        let n = shape.iter().product();
        self.insert(path, Tensor::new(shape, vec![value; n]).expect("init shape"));
    }

    fn insert(&mut self, path: String, t: Tensor) {
        let prior = self.tensors.insert(path.clone(), t);
        assert!(prior.is_none(), "duplicate parameter path {path}");
    }

    /// `{prefix}.weight` ([fan_in, fan_out]) plus a zero `{prefix}.bias`.
    fn affine(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.uniform(format!("{prefix}.weight"), vec![fan_in, fan_out], fan_in);
        self.constant(format!("{prefix}.bias"), vec![fan_out], 0.0);
    }

    /// Gain-1 / bias-0 layer-norm parameters.
    fn layer_norm(&mut self, prefix: &str, width: usize) {
        self.constant(format!("{prefix}.gain"), vec![width], 1.0);
        self.constant(format!("{prefix}.bias"), vec![width], 0.0);
    }
}

impl ModelParams {
    /// Builds a freshly initialized parameter set.
    ///
    /// Weights are U(±1/√fan_in), biases zero, layer-norm gains one,
    /// batch-norm running stats (mean 0, var 1). Drawing order is fixed, so
    /// the same rng state reproduces the same parameters bit for bit.
    pub fn init<R: Rng>(
        config: &ModelConfig,
        omics_dims: (usize, usize, usize),
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let (dim_mutation, dim_expression, dim_methylation) = omics_dims;
        if dim_mutation == 0 || dim_expression == 0 || dim_methylation == 0 {
            return Err(ModelError::Config(
                "omics input widths must be positive".into(),
            ));
        }
        let mut b = Builder {
            rng,
            tensors: BTreeMap::new(),
        };

        let mut width = ATOM_FEATURES;
        for (l, &next) in config.gcn_layer_widths.iter().enumerate() {
            b.affine(&format!("gcn.{l}"), width, next);
            width = next;
        }

        for (channel, dim) in [
            ("mutation", dim_mutation),
            ("expression", dim_expression),
            ("methylation", dim_methylation),
        ] {
            let mut width = dim;
            for (l, &next) in config.omics_hidden.iter().enumerate() {
                b.affine(&format!("omics.{channel}.{l}"), width, next);
                width = next;
            }
            let last = config.omics_hidden.len();
            b.affine(&format!("omics.{channel}.{last}"), width, config.d_model);
        }

        for blk in 0..config.n_blocks {
            for head in 0..config.heads {
                for proj in ["q", "k", "v"] {
                    b.uniform(
                        format!("block.{blk}.attn.{proj}.{head}"),
                        vec![config.d_model, config.d_k],
                        config.d_model,
                    );
                }
            }
            b.uniform(
                format!("block.{blk}.attn.out"),
                vec![config.d_model, config.d_model],
                config.d_model,
            );
            b.layer_norm(&format!("block.{blk}.ln1"), config.d_model);
            b.affine(&format!("block.{blk}.ff.0"), config.d_model, config.ff_inner);
            b.affine(&format!("block.{blk}.ff.1"), config.ff_inner, config.d_model);
            b.layer_norm(&format!("block.{blk}.ln2"), config.d_model);
        }

        let mut bn_states = BTreeMap::new();
        let mut channels = config.d_model;
        for (i, &c_out) in config.conv_channels.iter().enumerate() {
            b.uniform(
                format!("conv.{i}.weight"),
                vec![c_out, channels, config.conv_kernel],
                channels * config.conv_kernel,
            );
            b.constant(format!("conv.{i}.bias"), vec![c_out], 0.0);
            b.constant(format!("conv.{i}.bn.gamma"), vec![c_out], 1.0);
            b.constant(format!("conv.{i}.bn.beta"), vec![c_out], 0.0);
            bn_states.insert(format!("conv.{i}.bn"), BatchNormState::new(c_out));
            channels = c_out;
        }

        b.affine("head", config.head_input_width()?, 1);

        Ok(Self {
            config: config.clone(),
            omics_dims,
            tensors: b.tensors,
            bn_states,
        })
    }

    pub fn get(&self, path: &str) -> Result<&Tensor, ModelError> {
        self.tensors
            .get(path)
            .ok_or_else(|| ModelError::MissingParameter(path.to_string()))
    }

    /// Total trainable scalar count.
    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Registry paths in sorted order.
    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }
}

/// Tape handles for every trainable tensor, bound once per forward pass.
#[derive(Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Leafs every tensor onto the tape in sorted path order.
    pub fn bind(tape: &mut Tape, tensors: &BTreeMap<String, Tensor>) -> Self {
        let vars = tensors
            .iter()
            .map(|(path, t)| (path.clone(), tape.leaf(t.clone())))
            .collect();
        Self { vars }
    }

    pub fn var(&self, path: &str) -> Result<Var, ModelError> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| ModelError::MissingParameter(path.to_string()))
    }

    /// Iterates (path, var) in sorted path order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(p, &v)| (p.as_str(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            heads: 2,
            d_k: 4,
            n_blocks: 1,
            gcn_layer_widths: vec![6, 8],
            omics_hidden: vec![5],
            ff_inner: 7,
            conv_channels: vec![3],
            conv_kernel: 3,
            dropout_rate: 0.0,
            pool: crate::model::PoolKind::Max,
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = small_config();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = ModelParams::init(&cfg, (4, 4, 4), &mut r1).unwrap();
        let b = ModelParams::init(&cfg, (4, 4, 4), &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_equation_symbol_has_a_path() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ModelParams::init(&cfg, (4, 4, 4), &mut rng).unwrap();
        // W^(l) per GCN layer, per-head W_i^Q/K/V, W^O, FF, layer norms.
        for path in [
            "gcn.0.weight",
            "gcn.1.weight",
            "omics.mutation.0.weight",
            "omics.expression.1.weight",
            "omics.methylation.1.bias",
            "block.0.attn.q.0",
            "block.0.attn.k.1",
            "block.0.attn.v.0",
            "block.0.attn.out",
            "block.0.ln1.gain",
            "block.0.ff.0.weight",
            "block.0.ff.1.bias",
            "block.0.ln2.bias",
            "conv.0.weight",
            "conv.0.bn.gamma",
            "head.weight",
            "head.bias",
        ] {
            assert!(p.tensors.contains_key(path), "missing {path}");
        }
        assert!(p.bn_states.contains_key("conv.0.bn"));
    }

    #[test]
    fn biases_zero_gains_one() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(&cfg, (4, 4, 4), &mut rng).unwrap();
        assert!(p.get("gcn.0.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p
            .get("block.0.ln1.gain")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(p
            .get("conv.0.bn.gamma")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
    }

    #[test]
    fn weights_respect_fan_in_bound() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ModelParams::init(&cfg, (4, 4, 4), &mut rng).unwrap();
        let w = p.get("gcn.0.weight").unwrap();
        let bound = 1.0 / (crate::dataset::ATOM_FEATURES as f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < bound));
        assert!(w.data().iter().any(|v| v.abs() > bound / 10.0));
    }

    #[test]
    fn head_shape_follows_conv_arithmetic() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ModelParams::init(&cfg, (4, 4, 4), &mut rng).unwrap();
        // 101 positions -> (101-3)/2+1 = 50; 3 channels.
        assert_eq!(p.get("head.weight").unwrap().shape(), [150, 1]);
    }
}
