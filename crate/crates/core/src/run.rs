//! Run configuration shared by the training, evaluation and ablation
//! commands. Stored as TOML; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blocks::AsppRates;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::{Ablations, ModelConfig, SarInput};
use crate::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub patch: usize,
    pub base_channels: usize,
    /// Passes over the training split.
    pub epochs: usize,
    /// Total optimizer steps; overrides `epochs` when set.
    pub steps: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm limit; off when unset.
    pub grad_clip: Option<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sar_input: SarInput,
    pub scru_literal: bool,
    pub aspp_rates: Option<AsppRates>,
    pub ablations: Ablations,
    /// Worker threads for evaluation and ablation runs.
    pub threads: usize,
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            patch: 32,
            base_channels: 8,
            epochs: 200,
            steps: None,
            batch_size: 1,
            learning_rate: 7e-5,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            lambda1: 10.0,
            lambda2: 1.0,
            sar_input: SarInput::Pfsar,
            scru_literal: false,
            aspp_rates: None,
            ablations: Ablations::default(),
            threads: 1,
            data_dir: PathBuf::from("data"),
            checkpoint_dir: PathBuf::from("checkpoint"),
            report: PathBuf::from("report.tsv"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("learning_rate must be positive and betas in [0, 1)".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            base_channels: self.base_channels,
            patch: self.patch,
            sar_input: self.sar_input,
            ablations: self.ablations,
            scru_literal: self.scru_literal,
            aspp_rates: self.aspp_rates,
            ..ModelConfig::desk()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            clip: self.grad_clip,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    /// Total optimizer steps for a training split of `n_train` samples.
    pub fn total_steps(&self, n_train: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * n_train.div_ceil(self.batch_size))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let c = RunConfig::default();
        assert_eq!(c.learning_rate, 7e-5);
        assert_eq!((c.adam_beta1, c.adam_beta2), (0.5, 0.999));
        assert_eq!((c.lambda1, c.lambda2), (10.0, 1.0));
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("sed = 1\n"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("[ablations]\nno_foo = true\n").is_err());
        let c = RunConfig::from_toml("seed = 4\nsar_input = \"both\"\n[ablations]\nno_gc = true\n").unwrap();
        assert_eq!(c.seed, 4);
        assert!(c.ablations.no_gc);
        assert_eq!(c.model_config().sar_channels(), 12);
    }

    #[test]
    fn step_budget() {
        let c = RunConfig {
            epochs: 3,
            batch_size: 2,
            ..RunConfig::default()
        };
        assert_eq!(c.total_steps(5), 9);
        assert_eq!(RunConfig { steps: Some(7), ..c }.total_steps(5), 7);
    }
}
