//! `tcr predict`: read a responses-format CSV without the ln_ic50 column
//! and write it back with a predicted column appended.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tcr_core::dataset::load_inputs;
use tcr_core::eval::EVAL_CHUNK;
use tcr_core::model::{predict_eval, Checkpoint};

use crate::config::RunConfig;
use crate::manifest::{write_atomic, Manifest};
use crate::Common;

use super::prepare_out;

pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRow {
    drug_id: String,
    cell_id: String,
}

#[derive(Debug, Serialize)]
struct OutRow<'a> {
    drug_id: &'a str,
    cell_id: &'a str,
    predicted: f64,
}

pub fn run(common: &Common, checkpoint_path: &Path, input: &Path) -> Result<()> {
    let cfg = RunConfig::load(&common.config)?;
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let (params, _optimizer) = checkpoint.into_params()?;

    let paths = cfg.data()?;
    let (drugs, cells) = load_inputs(&paths.drugs, &paths.omics)?;
    let drug_at: HashMap<&str, usize> = drugs
        .iter()
        .enumerate()
        .map(|(i, d)| (d.drug_id.as_str(), i))
        .collect();
    let cell_at: HashMap<&str, usize> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| (c.cell_id.as_str(), i))
        .collect();

    let mut reader = csv::Reader::from_path(input)
        .with_context(|| format!("reading {}", input.display()))?;
    let mut pairs: Vec<(PairRow, usize, usize)> = Vec::new();
    for row in reader.deserialize::<PairRow>() {
        let row = row.with_context(|| format!("reading {}", input.display()))?;
        let line = pairs.len() + 2; // 1-based, after the header line
        let Some(&d) = drug_at.get(row.drug_id.as_str()) else {
            bail!("{}:{line}: unknown drug {}", input.display(), row.drug_id);
        };
        let Some(&c) = cell_at.get(row.cell_id.as_str()) else {
            bail!("{}:{line}: unknown cell {}", input.display(), row.cell_id);
        };
        pairs.push((row, d, c));
    }
    if pairs.is_empty() {
        bail!("{} has no data rows", input.display());
    }

    let mut predicted = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EVAL_CHUNK) {
        let batch: Vec<_> = chunk.iter().map(|&(_, d, c)| (&drugs[d], &cells[c])).collect();
        predicted.extend(predict_eval(&params, &batch)?);
    }

    prepare_out(&common.out)?;
    write_atomic(&common.out.join(PREDICTIONS_FILE), |tmp| {
        let mut w =
            csv::Writer::from_path(tmp).with_context(|| format!("writing {}", tmp.display()))?;
        for ((row, _, _), &p) in pairs.iter().zip(&predicted) {
            w.serialize(OutRow {
                drug_id: &row.drug_id,
                cell_id: &row.cell_id,
                predicted: p,
            })
            .with_context(|| format!("writing {}", tmp.display()))?;
        }
        w.flush().with_context(|| format!("writing {}", tmp.display()))
    })?;

    let resolved = RunConfig {
        model: Some(params.config.clone()),
        ..cfg
    };
    let mut manifest = Manifest::new("predict", common.seed.unwrap_or(0), resolved);
    manifest.record(&common.out, PREDICTIONS_FILE)?;
    manifest.save(&common.out)?;

    println!(
        "predict: {} pairs -> {}",
        pairs.len(),
        common.out.join(PREDICTIONS_FILE).display()
    );
    Ok(())
}
