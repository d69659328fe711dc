//! The dual objective: mean squared error on predictions plus a pairwise
//! hinge ranking loss, mixed by `beta`.

use super::{Result, TrainError};
use crate::tensor::{Tape, Tensor, Var};

/// Ranking label for a ground-truth pair: `+1` iff `y_i - y_j > 0`.
///
/// Ties take the `-1` branch by the `<= 0` rule.
pub fn rank_label(y_i: f64, y_j: f64) -> f64 {
    if y_i - y_j > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Pairwise hinge ranking loss `max(0, -label * (y1_hat - y2_hat) + margin)`.
pub fn rank_loss(y1_hat: f64, y2_hat: f64, label: f64, margin: f64) -> f64 {
    (-label * (y1_hat - y2_hat) + margin).max(0.0)
}

/// Loss components of one batch, all scalars recorded on the tape.
pub struct LossParts {
    /// `beta * mse + (1 - beta) * rank`.
    pub total: Var,
    pub mse: Var,
    pub rank: Var,
}

/// Builds the combined loss on the tape.
///
/// `predictions` is the `[batch, 1]` output of a batched forward pass over
/// the unique records, `truths` the matching ground-truth ln IC50 values,
/// and `pairs` (anchor, partner) positions into that batch. The MSE part
/// averages over the unique records; the rank part averages the hinge over
/// the pairs (zero when `pairs` is empty). Pair labels come from the ground
/// truth via [`rank_label`].
pub fn combined_loss(
    tape: &mut Tape,
    predictions: Var,
    truths: &[f64],
    pairs: &[(usize, usize)],
    beta: f64,
    margin: f64,
) -> Result<LossParts> {
    let n = truths.len();
    if n == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let shape = tape.value(predictions).shape().to_vec();
    if shape != [n, 1] {
        return Err(TrainError::Config(format!(
            "predictions shape {shape:?} does not match {n} truths"
        )));
    }
    for &(a, b) in pairs {
        if a >= n || b >= n {
            return Err(TrainError::Config(format!(
                "pair ({a}, {b}) out of range for batch of {n}"
            )));
        }
    }

    let truth = tape.leaf(Tensor::new(vec![n, 1], truths.to_vec())?);
    let diff = tape.sub(predictions, truth)?;
    let sq = tape.mul(diff, diff)?;
    let mse = tape.reduce_mean(sq)?;

    let rank = if pairs.is_empty() {
        tape.leaf(Tensor::scalar(0.0))
    } else {
        let firsts: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let seconds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let labels: Vec<f64> = pairs
            .iter()
            .map(|&(a, b)| rank_label(truths[a], truths[b]))
            .collect();
        let y1 = tape.gather_rows(predictions, &firsts)?;
        let y2 = tape.gather_rows(predictions, &seconds)?;
        let gap = tape.sub(y1, y2)?;
        let label = tape.leaf(Tensor::new(vec![pairs.len(), 1], labels)?);
        let signed = tape.mul(label, gap)?;
        let neg = tape.mul_scalar(signed, -1.0)?;
        let hinge_arg = tape.add_scalar(neg, margin)?;
        let hinge = tape.relu(hinge_arg)?;
        tape.reduce_mean(hinge)?
    };

    let mse_part = tape.mul_scalar(mse, beta)?;
    let rank_part = tape.mul_scalar(rank, 1.0 - beta)?;
    let total = tape.add(mse_part, rank_part)?;
    Ok(LossParts { total, mse, rank })
}
