//! `tcr train`: fit one model per selected fold, exporting checkpoints,
//! loss histories, and the exact split plan.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use tcr_core::model::Checkpoint;
use tcr_core::train::{derive_seed, fit, write_loss_history, TrainConfig};

use crate::config::RunConfig;
use crate::manifest::{write_atomic, Manifest};
use crate::Common;

use super::{load_data, prepare_out, resolve_plan, select_folds};

pub const SPLIT_FILE: &str = "split_plan.json";

pub fn run(common: &Common, split_path: Option<&Path>) -> Result<()> {
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

    // Everything is loaded and validated before any training starts, so a
    // bad path fails in milliseconds, not after the first fold.
    let (dataset, load_report) = load_data(&cfg)?;
    let plan = resolve_plan(&dataset, &split, split_path)?;
    // --folds wins; a manifest config replays its own fold selection.
    let requested = common
        .folds
        .clone()
        .or_else(|| prior.and_then(|m| m.folds));
    let folds = select_folds(plan.k, requested.as_deref())?;
    prepare_out(&common.out)?;

    write_atomic(&common.out.join(SPLIT_FILE), |tmp| Ok(plan.save(tmp)?))?;

    let resolved = RunConfig {
        model: Some(model.clone()),
        train: Some(train.clone()),
        split: Some(split.clone()),
        ..cfg
    };
    let mut manifest = Manifest::new("train", train.seed, resolved);
    manifest.folds = Some(folds.clone());
    manifest.data_report = Some(load_report);
    manifest.record(&common.out, SPLIT_FILE)?;

    for &fold in &folds {
        let fold_dir = common.out.join(format!("fold_{fold}"));
        fs::create_dir_all(&fold_dir)
            .with_context(|| format!("creating {}", fold_dir.display()))?;
        let fold_cfg = TrainConfig {
            seed: derive_seed(train.seed, fold as u64 + 1),
            ..train.clone()
        };
        let train_idx = plan.train_records(fold);
        let report = fit(&dataset, &train_idx, &model, &fold_cfg)?;

        let checkpoint = Checkpoint::from_params(&report.params, Some(report.optimizer.clone()));
        write_atomic(&fold_dir.join("checkpoint.json"), |tmp| {
            Ok(checkpoint.save(tmp)?)
        })?;
        write_atomic(&fold_dir.join("loss_history.csv"), |tmp| {
            Ok(write_loss_history(tmp, &report.history)?)
        })?;
        manifest.record(&common.out, &format!("fold_{fold}/checkpoint.json"))?;
        manifest.record(&common.out, &format!("fold_{fold}/loss_history.csv"))?;

        let last = report.history.last().expect("fit always runs >= 1 step");
        println!(
            "fold {fold}: {} records, {} steps, final loss {:.6}{}",
            train_idx.len(),
            report.history.len(),
            last.total,
            if report.stopped_early {
                " (target MSE reached)"
            } else {
                ""
            }
        );
    }

    manifest.save(&common.out)?;
    Ok(())
}
