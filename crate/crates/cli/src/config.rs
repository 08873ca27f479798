//! Experiment configuration file.
//!
//! Every block and field is optional; missing values take the defaults
//! below, unknown keys are rejected. Command-line flags are applied on top
//! of the parsed file.

use std::path::{Path, PathBuf};

use cladnet::classifier::CnnConfig;
use cladnet::continual::{StrategyConfig, TrainConfig};
use cladnet::data::DatasetConfig;
use cladnet::ssl::SslConfig;
use cladnet::sslnet::TransformerConfig;
use cladnet::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub ssl: SslConfig,
    pub strategy: StrategyConfig,
    pub run: RunConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub transformer: TransformerConfig,
    pub cnn: CnnConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Supervised epochs per subject.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Self-supervised learning rate; `lr` when unset.
    pub ssl_lr: Option<f64>,
    pub eval_chunk: usize,
    pub seeds: Vec<u64>,
    pub precision: Precision,
    /// Prepared cache to train on; prepared in memory from `dataset` when unset.
    pub cache: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            ssl_lr: train.ssl_lr,
            eval_chunk: train.eval_chunk,
            seeds: vec![0],
            precision: Precision::F64,
            cache: None,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            ssl_lr: self.ssl_lr,
            eval_chunk: self.eval_chunk,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.cnn.validate()?;
        self.ssl.validate()?;
        self.strategy.validate()?;
        self.run.train().validate()?;
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1", "[run]\nepoch = 3", "[model.cnn]\ndepth = 2", "[strategy]\nkind = \"sgd\""] {
            assert!(ExperimentConfig::from_toml(text).unwrap_err().is_usage(), "{text}");
        }
    }

    #[test]
    fn partial_blocks_keep_other_defaults() {
        let cfg = ExperimentConfig::from_toml("[run]\nepochs = 3\n[strategy]\nkind = \"lwf\"").unwrap();
        assert_eq!(cfg.run.epochs, 3);
        assert_eq!(cfg.run.batch_size, RunConfig::default().batch_size);
        assert_eq!(cfg.strategy.kind, cladnet::continual::StrategyKind::Lwf);
    }
}
