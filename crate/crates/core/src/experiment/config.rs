use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Layout, SplitSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::models::{GsmoConfig, ParamGroup};
use crate::training::{Approach, BalanceWeights, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    /// Images on disk.
    Directory { root: PathBuf, layout: Layout },
    /// Rendered into `<output>/data` before training.
    Synthetic(SyntheticSpec),
}

/// Which parameter groups to take from the `--from` checkpoint, and which to freeze.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub groups: Vec<ParamGroup>,
    pub freeze: Vec<ParamGroup>,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            groups: vec![ParamGroup::Backbone],
            freeze: Vec::new(),
        }
    }
}

/// A complete experiment description, stored as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: GsmoConfig,
    #[serde(default = "default_approach")]
    pub approach: Approach,
    #[serde(default)]
    pub weights: BalanceWeights,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_approach() -> Approach {
    Approach::Gsmo
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        ExperimentConfig {
            dataset,
            split: SplitSpec::default(),
            model: GsmoConfig::default(),
            approach: default_approach(),
            weights: BalanceWeights::default(),
            train: TrainConfig::default(),
            transfer: TransferConfig::default(),
            output: default_output(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; a relative `output` or dataset root is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        if let DatasetSource::Directory { root, .. } = &mut cfg.dataset {
            if root.is_relative() {
                *root = base.join(&*root);
            }
        }
        Ok(cfg)
    }

    /// Pretty JSON with every field present (the normalized form).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.split
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate()?;
        self.train.validate()?;
        self.weights
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }
}
