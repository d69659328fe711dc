//! `tcr sweep-beta`: train and score one run per β on a fixed fold,
//! emitting a beta,drug_pcc,pcc,scc,rmse table.

use std::fs;

use anyhow::{ensure, Context, Result};
use serde::Serialize;
use tcr_core::eval::{evaluate, predict_records, DEFAULT_MIN_SAMPLES};
use tcr_core::train::{derive_seed, fit, write_loss_history, TrainConfig};

use crate::config::RunConfig;
use crate::manifest::{write_atomic, Manifest};
use crate::Common;

use super::{load_data, prepare_out, resolve_plan, select_one_fold};

pub const SWEEP_FILE: &str = "sweep.csv";

/// The default grid: β = 0.1, 0.2, …, 1.0.
pub fn default_betas() -> Vec<f64> {
    (1..=10).map(|i| f64::from(i) / 10.0).collect()
}

#[derive(Serialize)]
struct SweepRow {
    beta: f64,
    drug_pcc: Option<f64>,
    pcc: Option<f64>,
    scc: Option<f64>,
    rmse: f64,
}

pub fn run(common: &Common, betas: Option<&[f64]>) -> Result<()> {
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

    // --betas/--folds win; a manifest config replays its own selections.
    let betas: Vec<f64> = betas
        .map(<[f64]>::to_vec)
        .or_else(|| prior.as_ref().and_then(|m| m.betas.clone()))
        .unwrap_or_else(default_betas);
    for &b in &betas {
        ensure!(
            b.is_finite() && (0.0..=1.0).contains(&b),
            "beta {b} is outside [0, 1]"
        );
    }

    let (dataset, load_report) = load_data(&cfg)?;
    let plan = resolve_plan(&dataset, &split, None)?;
    let requested = common
        .folds
        .clone()
        .or_else(|| prior.and_then(|m| m.folds));
    let fold = select_one_fold(plan.k, requested.as_deref())?;
    let train_idx = plan.train_records(fold);
    let test_idx = plan.test_records(fold);
    prepare_out(&common.out)?;

    let resolved = RunConfig {
        model: Some(model.clone()),
        train: Some(train.clone()),
        split: Some(split.clone()),
        ..cfg
    };
    let mut manifest = Manifest::new("sweep-beta", train.seed, resolved);
    manifest.folds = Some(vec![fold]);
    manifest.betas = Some(betas.clone());
    manifest.data_report = Some(load_report);

    // Seeds derive from the β index, so extending the grid later leaves
    // the existing points' runs untouched.
    let mut table = Vec::with_capacity(betas.len());
    for (i, &beta) in betas.iter().enumerate() {
        let point_cfg = TrainConfig {
            beta,
            seed: derive_seed(train.seed, i as u64 + 1),
            ..train.clone()
        };
        let report = fit(&dataset, &train_idx, &model, &point_cfg)?;

        let point_dir = common.out.join(format!("point_{i}"));
        fs::create_dir_all(&point_dir)
            .with_context(|| format!("creating {}", point_dir.display()))?;
        write_atomic(&point_dir.join("loss_history.csv"), |tmp| {
            Ok(write_loss_history(tmp, &report.history)?)
        })?;
        manifest.record(&common.out, &format!("point_{i}/loss_history.csv"))?;

        let rows = predict_records(&report.params, &dataset, &test_idx)?;
        let metrics = evaluate(&rows, DEFAULT_MIN_SAMPLES)?;
        table.push(SweepRow {
            beta,
            drug_pcc: metrics.drug_pcc,
            pcc: metrics.overall_pcc,
            scc: metrics.scc,
            rmse: metrics.rmse,
        });
    }

    write_atomic(&common.out.join(SWEEP_FILE), |tmp| {
        let mut w =
            csv::Writer::from_path(tmp).with_context(|| format!("writing {}", tmp.display()))?;
        for row in &table {
            w.serialize(row)
                .with_context(|| format!("writing {}", tmp.display()))?;
        }
        w.flush().with_context(|| format!("writing {}", tmp.display()))
    })?;
    manifest.record(&common.out, SWEEP_FILE)?;
    manifest.save(&common.out)?;

    println!(
        "sweep-beta: {} points on fold {fold} -> {}",
        betas.len(),
        common.out.join(SWEEP_FILE).display()
    );
    Ok(())
}
