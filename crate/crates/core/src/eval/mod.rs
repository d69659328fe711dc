//! Metrics and analyses over model predictions: overall and per-group
//! correlations, responder statistics, threshold filtering, and the one-hot
//! identity ablation.
//!
//! The headline metric is DrugPCC, the unweighted mean of per-drug Pearson
//! correlations. Groups that cannot support a correlation (too few samples
//! or zero variance) are skipped and counted, never coerced to zero.

mod ablation;
mod auc;
mod filter;
mod mwu;
mod stats;

pub use ablation::{onehot_ablation, onehot_cells, predict_records, AblationOutcome, EVAL_CHUNK};
pub use auc::{auc_from_ic50, effect_size, ResponderSet};
pub use filter::{pcc_threshold_filter, write_scatter_csv, EXTERNAL_MIN_SAMPLES};
pub use mwu::{rank_sum_test, EXACT_LIMIT};
pub use stats::{average_ranks, pearson, rmse, spearman};

use crate::dataset::DatasetError;
use crate::model::ModelError;
use crate::train::TrainError;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("correlation undefined for a zero-variance argument")]
    ZeroVariance,

    #[error("both responder classes must be present")]
    SingleClass,

    #[error("rank-sum groups must be non-empty")]
    EmptyGroup,

    #[error("no drug group survived the sample and variance filters")]
    NoSurvivingDrug,

    #[error("training failed: {0}")]
    Train(#[from] TrainError),

    #[error("model error: {0}")]
    Model(#[from] ModelError),

    #[error("dataset error: {0}")]
    Dataset(#[from] DatasetError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Default per-drug sample minimum for in-distribution reports; external
/// validation uses [`EXTERNAL_MIN_SAMPLES`].
pub const DEFAULT_MIN_SAMPLES: usize = 2;

/// One prediction joined with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub drug_id: String,
    pub cell_id: String,
    pub predicted: f64,
    pub truth: f64,
}

/// Per-drug correlation entry of a [`MetricReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugStat {
    pub drug_id: String,
    pub n: usize,
    pub pcc: f64,
}

/// Per-cell-line correlation entry of a [`MetricReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub cell_id: String,
    pub n: usize,
    pub pcc: f64,
}

/// Full evaluation summary. Correlations are `None` when undefined on the
/// given predictions (too few points or zero variance) rather than zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall_pcc: Option<f64>,
    pub drug_pcc: Option<f64>,
    pub scc: Option<f64>,
    pub rmse: f64,
    pub per_drug: Vec<DrugStat>,
    pub per_cell: Vec<CellStat>,
    pub n_drugs_skipped: usize,
}

/// Surviving `(key, n, pcc)` rows in first-appearance order plus the count
/// of groups skipped as undersized or degenerate.
type GroupedPcc = (Vec<(String, usize, f64)>, usize);

/// Groups rows by a key and computes per-group PCC, skipping groups that
/// are undersized or degenerate. Returns surviving stats in order of first
/// key appearance plus the skip count.
fn grouped_pcc<K: Fn(&PredictionRow) -> &str>(
    rows: &[PredictionRow],
    key: K,
    min_samples: usize,
) -> Result<GroupedPcc> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: std::collections::HashMap<&str, (Vec<f64>, Vec<f64>)> =
        std::collections::HashMap::new();
    for row in rows {
        let k = key(row);
        let entry = groups.entry(k).or_insert_with(|| {
            order.push(k);
            (Vec::new(), Vec::new())
        });
        entry.0.push(row.predicted);
        entry.1.push(row.truth);
    }
    let mut stats = Vec::new();
    let mut skipped = 0;
    for k in order {
        let (preds, truths) = &groups[k];
        if preds.len() < min_samples {
            skipped += 1;
            continue;
        }
        match pearson(preds, truths) {
            Ok(p) => stats.push((k.to_string(), preds.len(), p)),
            Err(EvalError::ZeroVariance) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((stats, skipped))
}

/// DrugPCC: the unweighted mean of per-drug Pearson correlations.
///
/// Groups below `min_samples` or with a constant argument are skipped and
/// counted. Errors when nothing survives.
pub fn drug_pcc(
    rows: &[PredictionRow],
    min_samples: usize,
) -> Result<(f64, Vec<DrugStat>, usize)> {
    let (stats, skipped) = grouped_pcc(rows, |r| &r.drug_id, min_samples)?;
    if stats.is_empty() {
        return Err(EvalError::NoSurvivingDrug);
    }
    let mean = stats.iter().map(|s| s.2).sum::<f64>() / stats.len() as f64;
    let table = stats
        .into_iter()
        .map(|(drug_id, n, pcc)| DrugStat { drug_id, n, pcc })
        .collect();
    Ok((mean, table, skipped))
}

/// Computes the full [`MetricReport`] for a set of predictions.
pub fn evaluate(rows: &[PredictionRow], min_samples: usize) -> Result<MetricReport> {
    if rows.is_empty() {
        return Err(EvalError::Input("no predictions to evaluate".into()));
    }
    let preds: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    let truths: Vec<f64> = rows.iter().map(|r| r.truth).collect();

    let maybe = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(EvalError::ZeroVariance) => Ok(None),
        Err(e) => Err(e),
    };
    let (overall_pcc, scc) = if rows.len() < 2 {
        (None, None)
    } else {
        (maybe(pearson(&preds, &truths))?, maybe(spearman(&preds, &truths))?)
    };
    let rmse = rmse(&preds, &truths)?;

    let (drug_stats, n_drugs_skipped) = grouped_pcc(rows, |r| &r.drug_id, min_samples)?;
    let drug_pcc = if drug_stats.is_empty() {
        None
    } else {
        Some(drug_stats.iter().map(|s| s.2).sum::<f64>() / drug_stats.len() as f64)
    };
    let per_drug = drug_stats
        .into_iter()
        .map(|(drug_id, n, pcc)| DrugStat { drug_id, n, pcc })
        .collect();

    let (cell_stats, _) = grouped_pcc(rows, |r| &r.cell_id, min_samples)?;
    let per_cell = cell_stats
        .into_iter()
        .map(|(cell_id, n, pcc)| CellStat { cell_id, n, pcc })
        .collect();

    Ok(MetricReport {
        overall_pcc,
        drug_pcc,
        scc,
        rmse,
        per_drug,
        per_cell,
        n_drugs_skipped,
    })
}

impl MetricReport {
    fn io_err(path: &Path, source: std::io::Error) -> EvalError {
        EvalError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Writes the full report as pretty JSON.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Self::io_err(path, std::io::Error::other(e)))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Self::io_err(path, e))
    }

    /// Writes the per-drug table as CSV (`drug_id,n,pcc`).
    pub fn write_per_drug_csv(&self, path: &Path) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).map_err(|e| Self::io_err(path, std::io::Error::other(e)))?;
        for s in &self.per_drug {
            w.serialize(s)
                .map_err(|e| Self::io_err(path, std::io::Error::other(e)))?;
        }
        w.flush().map_err(|e| Self::io_err(path, e))
    }

    /// Writes the per-cell table as CSV (`cell_id,n,pcc`).
    pub fn write_per_cell_csv(&self, path: &Path) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).map_err(|e| Self::io_err(path, std::io::Error::other(e)))?;
        for s in &self.per_cell {
            w.serialize(s)
                .map_err(|e| Self::io_err(path, std::io::Error::other(e)))?;
        }
        w.flush().map_err(|e| Self::io_err(path, e))
    }
}
