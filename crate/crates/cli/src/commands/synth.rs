//! `tcr synth`: write a seeded synthetic dataset as the three data files.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use tcr_core::dataset::{synth_generate, write_dataset};

use crate::config::{DataPaths, RunConfig};
use crate::manifest::Manifest;
use crate::Common;

use super::prepare_out;

pub const DRUGS_FILE: &str = "drugs.jsonl";
pub const OMICS_FILE: &str = "omics.jsonl";
pub const RESPONSES_FILE: &str = "responses.csv";

pub fn run(common: &Common) -> Result<()> {
    let cfg = RunConfig::load(&common.config)?;
    let mut synth = cfg.synth()?.clone();
    if let Some(seed) = common.seed {
        synth.seed = seed;
    }
    prepare_out(&common.out)?;

    let (raw, _truth) = synth_generate(&synth)?;

    // All three files are written to temp names and renamed together, so a
    // failure mid-write publishes nothing.
    let finals = [DRUGS_FILE, OMICS_FILE, RESPONSES_FILE].map(|n| common.out.join(n));
    let temps = finals.clone().map(|p| {
        let mut os = p.into_os_string();
        os.push(".tmp");
        PathBuf::from(os)
    });
    let wrote = write_dataset(&raw, &temps[0], &temps[1], &temps[2])
        .context("writing dataset files")
        .and_then(|()| {
            for (tmp, fin) in temps.iter().zip(&finals) {
                fs::rename(tmp, fin)
                    .with_context(|| format!("moving {} into place", fin.display()))?;
            }
            Ok(())
        });
    if wrote.is_err() {
        for tmp in &temps {
            let _ = fs::remove_file(tmp);
        }
        return wrote;
    }

    let resolved = RunConfig {
        synth: Some(synth.clone()),
        data: Some(DataPaths {
            drugs: finals[0].clone(),
            omics: finals[1].clone(),
            responses: finals[2].clone(),
        }),
        ..cfg
    };
    let mut manifest = Manifest::new("synth", synth.seed, resolved);
    for name in [DRUGS_FILE, OMICS_FILE, RESPONSES_FILE] {
        manifest.record(&common.out, name)?;
    }
    manifest.save(&common.out)?;

    println!(
        "synth: {} drugs x {} cells -> {} response rows in {}",
        raw.drugs.len(),
        raw.cells.len(),
        raw.records.len(),
        common.out.display()
    );
    Ok(())
}
