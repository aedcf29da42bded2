//! The run configuration file: one TOML tree with every setting of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbones::ModelConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalOptions;
use crate::tensor::{read_text, write_file};
use crate::training::OptimizerConfig;
use crate::trajdata::{PreprocessConfig, SynthConfig};

/// Sequence files consumed by `train`, `eval` and `ablate`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    /// Overrides the epoch count of both optimizer regimes.
    pub epochs: Option<usize>,
    /// Train every cell with `[optimizer]` instead of the per-backbone regimes.
    pub use_run_optimizer: bool,
    /// Add the relative-velocity variant of each SI-PVI row.
    pub with_velocity: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            seeds: vec![0, 1, 2],
            epochs: None,
            use_run_optimizer: false,
            with_velocity: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataPaths,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub eval: EvalOptions,
    pub synth: SynthConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    /// Parses TOML; unknown keys anywhere in the tree are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.synth.validate()?;
        if self.eval.n_samples == 0 {
            return Err(Error::Config("eval.n_samples must be at least 1".into()));
        }
        Ok(())
    }

    /// The resolved tree, defaults filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Writes `resolved.toml` into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("resolved.toml"), self.to_toml().as_bytes())
    }
}
