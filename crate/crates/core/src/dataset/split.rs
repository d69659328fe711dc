//! Cross-validation split plans: random, leave-drug-out, leave-cell-out.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Random,
    LeaveDrug,
    LeaveCell,
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SplitMode::Random => "random",
            SplitMode::LeaveDrug => "leave_drug",
            SplitMode::LeaveCell => "leave_cell",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "random" => Ok(SplitMode::Random),
            "leave_drug" => Ok(SplitMode::LeaveDrug),
            "leave_cell" => Ok(SplitMode::LeaveCell),
            other => Err(format!(
                "unknown split mode {other:?} (expected random, leave_drug, or leave_cell)"
            )),
        }
    }
}

/// A reproducible k-fold assignment over a dataset.
///
/// `record_folds[i]` is the fold owning record `i` as test data. For the
/// blind modes, `group_folds` additionally lists which drug/cell ids each
/// fold holds out, which is what the exported plan is judged by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub k: usize,
    pub seed: u64,
    pub record_folds: Vec<usize>,
    pub group_folds: Option<Vec<Vec<String>>>,
}

impl SplitPlan {
    /// Record indices whose test fold is `fold`.
    pub fn test_records(&self, fold: usize) -> Vec<usize> {
        self.record_folds
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Record indices outside `fold`.
    pub fn train_records(&self, fold: usize) -> Vec<usize> {
        self.record_folds
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Builds a k-fold plan by seeded shuffle + round-robin over the relevant
/// universe (records, drugs, or cells).
pub fn make_split(dataset: &Dataset, mode: SplitMode, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(DatasetError::Split(format!("k = {k}, need at least 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (record_folds, group_folds) = match mode {
        SplitMode::Random => {
            if dataset.n_records() < k {
                return Err(DatasetError::Split(format!(
                    "{} records cannot fill {k} folds",
                    dataset.n_records()
                )));
            }
            let mut order: Vec<usize> = (0..dataset.n_records()).collect();
            order.shuffle(&mut rng);
            let mut folds = vec![0usize; dataset.n_records()];
            for (pos, &rec) in order.iter().enumerate() {
                folds[rec] = pos % k;
            }
            (folds, None)
        }
        SplitMode::LeaveDrug => {
            let ids: Vec<String> = dataset.drugs.iter().map(|d| d.drug_id.clone()).collect();
            grouped_plan(dataset, &ids, k, &mut rng, "drugs", |ds, rec| {
                ds.record_index[rec].0
            })?
        }
        SplitMode::LeaveCell => {
            let ids: Vec<String> = dataset.cells.iter().map(|c| c.cell_id.clone()).collect();
            grouped_plan(dataset, &ids, k, &mut rng, "cells", |ds, rec| {
                ds.record_index[rec].1
            })?
        }
    };
    Ok(SplitPlan {
        mode,
        k,
        seed,
        record_folds,
        group_folds,
    })
}

type PlanParts = (Vec<usize>, Option<Vec<Vec<String>>>);

fn grouped_plan(
    dataset: &Dataset,
    ids: &[String],
    k: usize,
    rng: &mut ChaCha8Rng,
    what: &str,
    group_of: impl Fn(&Dataset, usize) -> usize,
) -> Result<PlanParts> {
    if ids.len() < k {
        return Err(DatasetError::Split(format!(
            "{} {what} cannot fill {k} folds",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(rng);
    let mut fold_of_group = vec![0usize; ids.len()];
    let mut group_folds = vec![Vec::new(); k];
    for (pos, &g) in order.iter().enumerate() {
        fold_of_group[g] = pos % k;
        group_folds[pos % k].push(ids[g].clone());
    }
    let record_folds = (0..dataset.n_records())
        .map(|rec| fold_of_group[group_of(dataset, rec)])
        .collect();
    Ok((record_folds, Some(group_folds)))
}
