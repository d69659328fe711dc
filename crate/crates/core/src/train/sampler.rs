//! Cross-sampling: batches are built from anchor-partner pairs that share
//! either the anchor's drug or its cell line.

use super::{Result, TrainError};
use crate::dataset::Dataset;
use rand::Rng;
use std::collections::HashMap;

/// Axis a pair shares: same drug, different cells, or the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairAxis {
    Drug,
    Cell,
}

/// One sampled batch: the unique records to run forward, and the pairs
/// feeding the ranking loss as positions into that record list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    /// Unique dataset record indices, in order of first appearance.
    pub records: Vec<usize>,
    /// `(anchor, partner, axis)` where anchor/partner index into `records`.
    pub pairs: Vec<(usize, usize, PairAxis)>,
}

impl PairBatch {
    /// Pair positions without the axis tag, as the loss consumes them.
    pub fn pair_positions(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().map(|&(a, b, _)| (a, b)).collect()
    }
}

/// How many times to redraw an isolated anchor before giving up. Only
/// reachable when nearly every record lacks partners, which the upfront
/// bucket check already rules out for sane datasets.
const MAX_ANCHOR_ATTEMPTS: usize = 10_000;

/// Draws `batch_pairs` anchors uniformly from `pool` and pairs each with a
/// uniform partner sharing the drug (with probability `axis_mix`) or the
/// cell line. An anchor whose chosen axis has no partner falls back to the
/// other axis; an anchor isolated on both axes is redrawn.
///
/// Errors when no record in the pool has a partner on either axis.
pub fn cross_sample_batch<R: Rng>(
    dataset: &Dataset,
    pool: &[usize],
    rng: &mut R,
    batch_pairs: usize,
    axis_mix: f64,
) -> Result<PairBatch> {
    if pool.is_empty() {
        return Err(TrainError::Sampling("record pool is empty".into()));
    }
    for &r in pool {
        if r >= dataset.records.len() {
            return Err(TrainError::Sampling(format!(
                "record index {r} out of range"
            )));
        }
    }

    let mut drug_buckets: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut cell_buckets: HashMap<usize, Vec<usize>> = HashMap::new();
    for &r in pool {
        let (d, c) = dataset.record_index[r];
        drug_buckets.entry(d).or_default().push(r);
        cell_buckets.entry(c).or_default().push(r);
    }
    let pairable = |r: usize| {
        let (d, c) = dataset.record_index[r];
        drug_buckets[&d].len() >= 2 || cell_buckets[&c].len() >= 2
    };
    if !pool.iter().any(|&r| pairable(r)) {
        return Err(TrainError::Sampling(
            "no record shares a drug or cell line with another".into(),
        ));
    }

    let mut records: Vec<usize> = Vec::new();
    let mut position: HashMap<usize, usize> = HashMap::new();
    let mut intern = |r: usize, records: &mut Vec<usize>| -> usize {
        *position.entry(r).or_insert_with(|| {
            records.push(r);
            records.len() - 1
        })
    };

    let mut pairs = Vec::with_capacity(batch_pairs);
    for _ in 0..batch_pairs {
        let mut attempts = 0;
        let (anchor, partner, axis) = loop {
            let anchor = pool[rng.gen_range(0..pool.len())];
            let (d, c) = dataset.record_index[anchor];
            let want_drug = rng.gen::<f64>() < axis_mix;
            let ordered = if want_drug {
                [(PairAxis::Drug, &drug_buckets[&d]), (PairAxis::Cell, &cell_buckets[&c])]
            } else {
                [(PairAxis::Cell, &cell_buckets[&c]), (PairAxis::Drug, &drug_buckets[&d])]
            };
            let choice = ordered.iter().find(|(_, bucket)| bucket.len() >= 2);
            if let Some(&(axis, bucket)) = choice {
                let at = bucket.iter().position(|&r| r == anchor).expect("anchor in its bucket");
                let k = rng.gen_range(0..bucket.len() - 1);
                let partner = bucket[if k >= at { k + 1 } else { k }];
                break (anchor, partner, axis);
            }
            attempts += 1;
            if attempts >= MAX_ANCHOR_ATTEMPTS {
                return Err(TrainError::Sampling(
                    "could not draw a pairable anchor".into(),
                ));
            }
        };
        let a = intern(anchor, &mut records);
        let b = intern(partner, &mut records);
        pairs.push((a, b, axis));
    }

    Ok(PairBatch { records, pairs })
}
