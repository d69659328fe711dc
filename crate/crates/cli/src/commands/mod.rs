//! One module per subcommand plus the plumbing they share.

pub mod ablate;
pub mod evaluate;
pub mod predict;
pub mod sweep;
pub mod synth;
pub mod train;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use tcr_core::dataset::{load_dataset, make_split, Dataset, LoadReport, SplitPlan};

use crate::config::{RunConfig, SplitSpec};

/// Creates the output directory (and parents) if needed.
pub fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
}

/// Loads the dataset named by the config's `[data]` section.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, LoadReport)> {
    let paths = cfg.data()?;
    let (dataset, report) = load_dataset(&paths.drugs, &paths.omics, &paths.responses)?;
    if dataset.n_records() == 0 {
        bail!(
            "{} has no response rows matching the drug and omics files",
            paths.responses.display()
        );
    }
    Ok((dataset, report))
}

/// An exported split plan when one is given, otherwise a fresh plan from
/// the spec. Either way the plan must cover this dataset.
pub fn resolve_plan(
    dataset: &Dataset,
    spec: &SplitSpec,
    plan_path: Option<&Path>,
) -> Result<SplitPlan> {
    match plan_path {
        Some(p) => {
            let plan = SplitPlan::load(p)?;
            ensure!(
                plan.record_folds.len() == dataset.n_records(),
                "split plan {} covers {} records but the dataset has {}",
                p.display(),
                plan.record_folds.len(),
                dataset.n_records()
            );
            Ok(plan)
        }
        None => Ok(make_split(dataset, spec.mode, spec.k, spec.seed)?),
    }
}

/// The folds a command should process: the requested list, validated, or
/// every fold of the plan.
pub fn select_folds(k: usize, requested: Option<&[usize]>) -> Result<Vec<usize>> {
    let Some(list) = requested else {
        return Ok((0..k).collect());
    };
    ensure!(!list.is_empty(), "--folds must name at least one fold");
    let mut seen = HashSet::new();
    for &f in list {
        ensure!(f < k, "fold {f} is out of range for a {k}-fold split");
        ensure!(seen.insert(f), "fold {f} is listed twice");
    }
    Ok(list.to_vec())
}

/// Like [`select_folds`] but for commands that act on one fold.
pub fn select_one_fold(k: usize, requested: Option<&[usize]>) -> Result<usize> {
    let folds = select_folds(k, requested)?;
    match requested {
        None => Ok(0),
        Some(_) => {
            ensure!(
                folds.len() == 1,
                "this command evaluates exactly one fold; got --folds with {}",
                folds.len()
            );
            Ok(folds[0])
        }
    }
}

/// `Some(x)` → formatted value, `None` → `n/a` (metric undefined).
pub fn show_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}
