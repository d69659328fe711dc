//! `tcr evaluate`: score a checkpoint on one held-out fold, exporting the
//! metric report, per-group tables, and the raw prediction scatter data.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use tcr_core::eval::{evaluate, predict_records, PredictionRow, DEFAULT_MIN_SAMPLES};
use tcr_core::model::Checkpoint;

use crate::config::RunConfig;
use crate::manifest::{write_atomic, Manifest};
use crate::Common;

use super::{load_data, prepare_out, resolve_plan, select_one_fold, show_metric};

pub const REPORT_FILE: &str = "report.json";
pub const PER_DRUG_FILE: &str = "per_drug.csv";
pub const PER_CELL_FILE: &str = "per_cell.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// Writes prediction rows as drug_id,cell_id,predicted,truth CSV.
pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn run(common: &Common, checkpoint_path: &Path, split_path: Option<&Path>) -> Result<()> {
    let (cfg, prior) = RunConfig::load_full(&common.config)?;
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let (params, _optimizer) = checkpoint.into_params()?;
    if let Some(model) = &cfg.model {
        ensure!(
            *model == params.config,
            "the [model] section does not match the checkpoint's configuration"
        );
    }

    let mut split = cfg.split();
    if let Some(seed) = common.seed {
        split.seed = seed;
    }
    let (dataset, load_report) = load_data(&cfg)?;
    let plan = resolve_plan(&dataset, &split, split_path)?;
    let requested = common
        .folds
        .clone()
        .or_else(|| prior.and_then(|m| m.folds));
    let fold = select_one_fold(plan.k, requested.as_deref())?;
    prepare_out(&common.out)?;

    let rows = predict_records(&params, &dataset, &plan.test_records(fold))?;
    let report = evaluate(&rows, DEFAULT_MIN_SAMPLES)?;

    write_atomic(&common.out.join(REPORT_FILE), |tmp| {
        Ok(report.write_json(tmp)?)
    })?;
    write_atomic(&common.out.join(PER_DRUG_FILE), |tmp| {
        Ok(report.write_per_drug_csv(tmp)?)
    })?;
    write_atomic(&common.out.join(PER_CELL_FILE), |tmp| {
        Ok(report.write_per_cell_csv(tmp)?)
    })?;
    write_atomic(&common.out.join(PREDICTIONS_FILE), |tmp| {
        write_predictions(tmp, &rows)
    })?;

    let resolved = RunConfig {
        model: Some(params.config.clone()),
        split: Some(split.clone()),
        ..cfg
    };
    let mut manifest = Manifest::new("evaluate", split.seed, resolved);
    manifest.folds = Some(vec![fold]);
    manifest.data_report = Some(load_report);
    for name in [REPORT_FILE, PER_DRUG_FILE, PER_CELL_FILE, PREDICTIONS_FILE] {
        manifest.record(&common.out, name)?;
    }
    manifest.save(&common.out)?;

    println!(
        "fold {fold}: {} pairs | PCC {} | DrugPCC {} | SCC {} | RMSE {:.4} | {} drugs skipped",
        rows.len(),
        show_metric(report.overall_pcc),
        show_metric(report.drug_pcc),
        show_metric(report.scc),
        report.rmse,
        report.n_drugs_skipped
    );
    Ok(())
}
