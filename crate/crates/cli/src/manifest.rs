//! Run manifests — the fully resolved config, seeds, and SHA-256 of every
//! artifact — plus the atomic-write and hashing helpers all commands share.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tcr_core::dataset::LoadReport;

use crate::config::RunConfig;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

/// Everything needed to reproduce a run: pass this file back to the same
/// command as `--config` and the outputs regenerate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub command: String,
    /// Root seed; every fold and sweep-point seed derives from it.
    pub seed: u64,
    /// Fold selection, for commands that work per fold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<Vec<usize>>,
    /// The β grid, for sweep-beta.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    /// What the dataset loader kept and dropped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_report: Option<LoadReport>,
    /// The fully resolved configuration the run used.
    pub config: RunConfig,
    /// Output-relative artifact path → SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: RunConfig) -> Self {
        Self {
            version: MANIFEST_VERSION,
            command: command.to_string(),
            seed,
            folds: None,
            betas: None,
            data_report: None,
            config,
            artifacts: BTreeMap::new(),
        }
    }

    /// Hashes the artifact at `out/rel` and records it under `rel`.
    pub fn record(&mut self, out: &Path, rel: &str) -> Result<()> {
        let hash = sha256_file(&out.join(rel))?;
        self.artifacts.insert(rel.to_string(), hash);
        Ok(())
    }

    /// Writes `manifest.json` under `out`.
    pub fn save(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join(MANIFEST_NAME);
        write_atomic(&path, |tmp| {
            let mut text = serde_json::to_string_pretty(self).context("encoding manifest")?;
            text.push('\n');
            fs::write(tmp, text).with_context(|| format!("writing {}", tmp.display()))
        })?;
        Ok(path)
    }
}

/// SHA-256 of a file's bytes, as lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file =
        fs::File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher)
        .with_context(|| format!("hashing {}", path.display()))?;
    Ok(format!("{:x}", hasher.finalize()))
}

/// Runs `write` against a sibling `.tmp` path, then renames it over `path`,
/// so the destination never holds a partial file. The temp file is removed
/// on failure.
pub fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let attempt = write(&tmp).and_then(|()| {
        fs::rename(&tmp, path)
            .with_context(|| format!("moving {} into place", path.display()))
    });
    if attempt.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    attempt
}
