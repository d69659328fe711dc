//! Run configuration: a sectioned TOML document, or the `manifest.json` of
//! a previous run (whose embedded config replays that run exactly).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tcr_core::dataset::{SplitMode, SynthConfig};
use tcr_core::model::ModelConfig;
use tcr_core::train::TrainConfig;

/// Paths of the three dataset files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub drugs: PathBuf,
    pub omics: PathBuf,
    pub responses: PathBuf,
}

/// Cross-validation request: how to cut the dataset into folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub k: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::Random,
            k: 5,
            seed: 0,
        }
    }
}

/// One parsed config file. Sections are optional so each command can
/// insist on exactly what it needs; unknown sections or keys are errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataPaths>,
    pub synth: Option<SynthConfig>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub split: Option<SplitSpec>,
}

impl RunConfig {
    /// Reads a config from TOML, or from a previous run's `manifest.json`
    /// (selected by the `.json` extension).
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_full(path).map(|(cfg, _)| cfg)
    }

    /// Like [`RunConfig::load`], but when the source is a manifest also
    /// returns it, so commands can replay its fold and β selections.
    pub fn load_full(path: &Path) -> Result<(Self, Option<crate::manifest::Manifest>)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: crate::manifest::Manifest = serde_json::from_str(&text)
                .with_context(|| format!("parsing manifest {}", path.display()))?;
            Ok((manifest.config.clone(), Some(manifest)))
        } else {
            let cfg = toml::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
            Ok((cfg, None))
        }
    }

    /// The `[data]` section, required.
    pub fn data(&self) -> Result<&DataPaths> {
        match &self.data {
            Some(d) => Ok(d),
            None => bail!("config has no [data] section naming drugs/omics/responses files"),
        }
    }

    /// The `[synth]` section, required.
    pub fn synth(&self) -> Result<&SynthConfig> {
        match &self.synth {
            Some(s) => Ok(s),
            None => bail!("config has no [synth] section"),
        }
    }

    /// The `[model]` section, or library defaults.
    pub fn model(&self) -> ModelConfig {
        self.model.clone().unwrap_or_default()
    }

    /// The `[train]` section, or library defaults.
    pub fn train(&self) -> TrainConfig {
        self.train.clone().unwrap_or_default()
    }

    /// The `[split]` section, or defaults (5-fold random, seed 0).
    pub fn split(&self) -> SplitSpec {
        self.split.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_sections_parse_and_default() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [split]
            mode = "leave_cell"
            k = 3

            [train]
            beta = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.split().mode, SplitMode::LeaveCell);
        assert_eq!(cfg.split().k, 3);
        assert_eq!(cfg.split().seed, 0);
        assert_eq!(cfg.train().beta, 0.5);
        assert_eq!(cfg.train().batch_pairs, TrainConfig::default().batch_pairs);
        assert!(cfg.data.is_none());
        assert_eq!(cfg.model(), ModelConfig::default());
    }

    #[test]
    fn unknown_section_keys_are_rejected() {
        let bad: std::result::Result<RunConfig, _> = toml::from_str(
            r#"
            [train]
            betaa = 0.5
            "#,
        );
        let msg = bad.unwrap_err().to_string();
        assert!(msg.contains("betaa"), "{msg}");

        let bad: std::result::Result<RunConfig, _> = toml::from_str("[tarin]\nbeta = 0.5\n");
        assert!(bad.unwrap_err().to_string().contains("tarin"));
    }

    #[test]
    fn missing_sections_error_by_name() {
        let cfg = RunConfig::default();
        assert!(cfg.data().unwrap_err().to_string().contains("[data]"));
        assert!(cfg.synth().unwrap_err().to_string().contains("[synth]"));
    }
}
