//! `tcr ablate`: input-ablation experiments.
//!
//! `onehot` swaps omics for cell identity under a leave-cell split, the
//! experiment showing overall PCC can stay high while DrugPCC collapses.
//! `single_omics` retrains from scratch keeping one omics channel at a
//! time, plus the multi-omics baseline.

use anyhow::{Context, Result};
use serde::Serialize;
use tcr_core::dataset::{Dataset, OmicsProfile};
use tcr_core::eval::{
    evaluate, onehot_ablation, predict_records, MetricReport, PredictionRow, DEFAULT_MIN_SAMPLES,
};
use tcr_core::train::{derive_seed, fit, TrainConfig};

use crate::config::RunConfig;
use crate::manifest::{write_atomic, Manifest};
use crate::{AblateMode, Common};

use super::{load_data, prepare_out, resolve_plan, select_folds, show_metric};

pub const TABLE_FILE: &str = "ablation.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const SPLIT_FILE: &str = "split_plan.json";

/// One experimental setting's pooled cross-validation metrics.
#[derive(Serialize)]
struct AblationRow {
    setting: &'static str,
    pcc: Option<f64>,
    drug_pcc: Option<f64>,
    scc: Option<f64>,
    rmse: f64,
    folds: usize,
    seed: u64,
}

impl AblationRow {
    fn new(setting: &'static str, m: &MetricReport, folds: usize, seed: u64) -> Self {
        Self {
            setting,
            pcc: m.overall_pcc,
            drug_pcc: m.drug_pcc,
            scc: m.scc,
            rmse: m.rmse,
            folds,
            seed,
        }
    }
}

/// Omics channels a single-omics setting can keep.
#[derive(Clone, Copy)]
enum Keep {
    All,
    Mutation,
    Expression,
    Methylation,
}

/// Cells with every channel but the kept one zeroed out.
fn keep_channel(cells: &[OmicsProfile], keep: Keep) -> Vec<OmicsProfile> {
    let zeroed = |v: &[f64]| vec![0.0; v.len()];
    cells
        .iter()
        .map(|c| match keep {
            Keep::All => c.clone(),
            Keep::Mutation => OmicsProfile {
                cell_id: c.cell_id.clone(),
                mutation: c.mutation.clone(),
                expression: zeroed(&c.expression),
                methylation: zeroed(&c.methylation),
            },
            Keep::Expression => OmicsProfile {
                cell_id: c.cell_id.clone(),
                mutation: zeroed(&c.mutation),
                expression: c.expression.clone(),
                methylation: zeroed(&c.methylation),
            },
            Keep::Methylation => OmicsProfile {
                cell_id: c.cell_id.clone(),
                mutation: zeroed(&c.mutation),
                expression: zeroed(&c.expression),
                methylation: c.methylation.clone(),
            },
        })
        .collect()
}

pub fn run(common: &Common, mode: AblateMode) -> Result<()> {
    let (cfg, prior) = RunConfig::load_full(&common.config)?;
    let model = cfg.model();
    model.validate()?;
    let mut train = cfg.train();
    let mut split = cfg.split();
    if let Some(seed) = common.seed {
        train.seed = seed;
        split.seed = seed;
    }
    train.validate()?;

    let (dataset, load_report) = load_data(&cfg)?;
    prepare_out(&common.out)?;

    let resolved = RunConfig {
        model: Some(model.clone()),
        train: Some(train.clone()),
        split: Some(split.clone()),
        ..cfg
    };
    let command = match mode {
        AblateMode::Onehot => "ablate-onehot",
        AblateMode::SingleOmics => "ablate-single-omics",
    };
    let mut manifest = Manifest::new(command, train.seed, resolved);
    manifest.data_report = Some(load_report);

    let mut table: Vec<AblationRow> = Vec::new();
    let mut pooled_rows: Vec<PredictionRow> = Vec::new();

    match mode {
        AblateMode::Onehot => {
            // The library experiment owns the split (always leave-cell) and
            // the per-fold seeds; only k comes from the [split] section.
            anyhow::ensure!(
                common.folds.is_none(),
                "onehot mode always runs every fold; --folds is not supported here"
            );
            let outcome = onehot_ablation(&dataset, &model, &train, split.k)?;
            table.push(AblationRow::new(
                "onehot",
                &outcome.report,
                split.k,
                train.seed,
            ));
            pooled_rows = outcome.rows;
            write_atomic(&common.out.join(SPLIT_FILE), |tmp| {
                Ok(outcome.plan.save(tmp)?)
            })?;
            manifest.record(&common.out, SPLIT_FILE)?;
            manifest.folds = Some((0..split.k).collect());
        }
        AblateMode::SingleOmics => {
            let plan = resolve_plan(&dataset, &split, None)?;
            let requested = common
                .folds
                .clone()
                .or_else(|| prior.and_then(|m| m.folds));
            let folds = select_folds(plan.k, requested.as_deref())?;
            let settings: [(&'static str, Keep); 4] = [
                ("multi_omics", Keep::All),
                ("mutation_only", Keep::Mutation),
                ("expression_only", Keep::Expression),
                ("methylation_only", Keep::Methylation),
            ];
            for (i, (name, keep)) in settings.into_iter().enumerate() {
                let setting_ds = Dataset {
                    drugs: dataset.drugs.clone(),
                    cells: keep_channel(&dataset.cells, keep),
                    records: dataset.records.clone(),
                    record_index: dataset.record_index.clone(),
                };
                let setting_seed = derive_seed(train.seed, i as u64 + 1);
                let mut rows = Vec::new();
                for &fold in &folds {
                    let fold_cfg = TrainConfig {
                        seed: derive_seed(setting_seed, fold as u64 + 1),
                        ..train.clone()
                    };
                    let report = fit(&setting_ds, &plan.train_records(fold), &model, &fold_cfg)?;
                    rows.extend(predict_records(
                        &report.params,
                        &setting_ds,
                        &plan.test_records(fold),
                    )?);
                }
                let metrics = evaluate(&rows, DEFAULT_MIN_SAMPLES)?;
                table.push(AblationRow::new(name, &metrics, folds.len(), setting_seed));
            }
            write_atomic(&common.out.join(SPLIT_FILE), |tmp| Ok(plan.save(tmp)?))?;
            manifest.record(&common.out, SPLIT_FILE)?;
            manifest.folds = Some(folds);
        }
    }

    write_atomic(&common.out.join(TABLE_FILE), |tmp| {
        let mut w =
            csv::Writer::from_path(tmp).with_context(|| format!("writing {}", tmp.display()))?;
        for row in &table {
            w.serialize(row)
                .with_context(|| format!("writing {}", tmp.display()))?;
        }
        w.flush().with_context(|| format!("writing {}", tmp.display()))
    })?;
    manifest.record(&common.out, TABLE_FILE)?;

    if !pooled_rows.is_empty() {
        write_atomic(&common.out.join(PREDICTIONS_FILE), |tmp| {
            super::evaluate::write_predictions(tmp, &pooled_rows)
        })?;
        manifest.record(&common.out, PREDICTIONS_FILE)?;
    }
    manifest.save(&common.out)?;

    for row in &table {
        println!(
            "{}: PCC {} | DrugPCC {} | SCC {} | RMSE {:.4}",
            row.setting,
            show_metric(row.pcc),
            show_metric(row.drug_pcc),
            show_metric(row.scc),
            row.rmse
        );
    }
    Ok(())
}
