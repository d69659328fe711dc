//! The training loop: sample pairs, forward, combined loss, backward, Adam.

use super::{adam_step, combined_loss, cross_sample_batch};
use super::{Result, TrainConfig, TrainError};
use crate::dataset::Dataset;
use crate::model::{forward_batch, AdamSnapshot, ModelConfig, ModelParams};
use crate::tensor::{Mode, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Loss components of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub total: f64,
    pub mse: f64,
    pub rank: f64,
}

/// Everything a finished training run produces.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: ModelParams,
    pub optimizer: AdamSnapshot,
    pub history: Vec<LossRecord>,
    /// True when `stop_at_train_mse` ended the run before the step budget.
    pub stopped_early: bool,
}

/// Trains a fresh model on `train_records` and returns it with the full
/// per-step loss history.
///
/// Initialization, pair sampling, and dropout all draw from one ChaCha
/// stream seeded by `train_config.seed`, so a repeated call is bitwise
/// reproducible. Each epoch runs `ceil(len / (2 * batch_pairs))` steps,
/// one batched forward over the unique records of a freshly sampled
/// [`super::PairBatch`]. The loop aborts with [`TrainError::Diverged`] the
/// moment any loss component turns non-finite, before the weights are
/// touched by that step's update.
pub fn fit(
    dataset: &Dataset,
    train_records: &[usize],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<FitReport> {
    model_config
        .validate()
        .map_err(|e| TrainError::Config(e.to_string()))?;
    train_config.validate()?;
    if train_records.is_empty() {
        return Err(TrainError::Sampling("train fold is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut params = ModelParams::init(model_config, dataset.omics_dims(), &mut rng)?;
    let mut optimizer = AdamSnapshot::default();
    let mut history = Vec::new();
    let mut stopped_early = false;

    let per_batch = 2 * train_config.batch_pairs;
    let steps_per_epoch = train_records.len().div_ceil(per_batch).max(1);
    let total_steps = (train_config.epochs * steps_per_epoch) as u64;

    'steps: for step in 1..=total_steps {
        let (record, by_path) =
            match run_step(dataset, train_records, &mut params, &mut rng, train_config, step) {
                Ok(out) => out,
                // The tape rejects non-finite values at the op that produces
                // them, which is how a diverging run actually surfaces.
                Err(e) if is_nonfinite(&e) => return Err(TrainError::Diverged { step }),
                Err(e) => return Err(e),
            };
        adam_step(&mut params, &by_path, &mut optimizer, train_config)?;
        history.push(record);

        if let Some(threshold) = train_config.stop_at_train_mse {
            if record.mse < threshold {
                stopped_early = true;
                break 'steps;
            }
        }
    }

    Ok(FitReport {
        params,
        optimizer,
        history,
        stopped_early,
    })
}

fn is_nonfinite(e: &TrainError) -> bool {
    use crate::model::ModelError;
    use crate::tensor::TensorError;
    matches!(e, TrainError::Tensor(TensorError::NonFinite { .. }))
        || matches!(
            e,
            TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))
        )
}

/// One sample-forward-loss-backward pass; the caller applies the update.
fn run_step(
    dataset: &Dataset,
    train_records: &[usize],
    params: &mut ModelParams,
    rng: &mut ChaCha8Rng,
    train_config: &TrainConfig,
    step: u64,
) -> Result<(LossRecord, BTreeMap<String, Tensor>)> {
    let batch = cross_sample_batch(
        dataset,
        train_records,
        rng,
        train_config.batch_pairs,
        train_config.rank_pair_axis_mix,
    )?;
    let mut refs = Vec::with_capacity(batch.records.len());
    let mut truths = Vec::with_capacity(batch.records.len());
    for &r in &batch.records {
        let (d, c) = dataset.record_index[r];
        refs.push((&dataset.drugs[d], &dataset.cells[c]));
        truths.push(dataset.records[r].ln_ic50);
    }

    let mut tape = Tape::new();
    let fwd = forward_batch(&mut tape, params, &refs, Mode::Train, rng)?;
    let parts = combined_loss(
        &mut tape,
        fwd.predictions,
        &truths,
        &batch.pair_positions(),
        train_config.beta,
        train_config.margin,
    )?;
    let record = LossRecord {
        step,
        total: tape.value(parts.total).data()[0],
        mse: tape.value(parts.mse).data()[0],
        rank: tape.value(parts.rank).data()[0],
    };
    if !(record.total.is_finite() && record.mse.is_finite() && record.rank.is_finite()) {
        return Err(TrainError::Diverged { step });
    }

    let grads = tape.backward(parts.total)?;
    let mut by_path: BTreeMap<String, Tensor> = BTreeMap::new();
    for (path, var) in fwd.bound.iter() {
        if let Some(g) = grads.get(var) {
            by_path.insert(path.to_string(), g.clone());
        }
    }
    Ok((record, by_path))
}

/// Writes a loss history as CSV with header `step,total,mse,rank`.
pub fn write_loss_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    let io_err = |source: std::io::Error| TrainError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| io_err(std::io::Error::other(e)))?;
    for record in history {
        w.serialize(record)
            .map_err(|e| io_err(std::io::Error::other(e)))?;
    }
    w.flush().map_err(io_err)
}
