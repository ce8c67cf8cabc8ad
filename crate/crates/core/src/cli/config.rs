//! Optional TOML configuration with `[generation]`, `[matching]` and
//! `[training]` sections. Command-line flags override file values.

use std::path::Path;

use serde::Deserialize;

use crate::agents::GenerationParams;
use crate::classifier::Hyperparams;
use crate::error::{Error, Result};
use crate::matcher::MatchConfig;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
    pub dim: usize,
    pub scenario_encoding: bool,
}

pub const DEFAULT_DIM: usize = 1024;

impl Default for TrainingConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        TrainingConfig {
            lr: hp.lr,
            epochs: hp.epochs,
            batch_size: hp.batch_size,
            beta1: hp.beta1,
            beta2: hp.beta2,
            eps: hp.eps,
            max_grad_norm: hp.max_grad_norm,
            seed: hp.seed,
            dim: DEFAULT_DIM,
            scenario_encoding: false,
        }
    }
}

impl TrainingConfig {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            max_grad_norm: self.max_grad_norm,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub generation: GenerationParams,
    pub matching: MatchConfig,
    pub training: TrainingConfig,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: FileConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.generation.validate()?;
        cfg.matching.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
                FileConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }
}
