//! Flat TOML run configuration. A config file lists every key; flags given on
//! the command line replace the file's values.

use std::path::Path;

use neurosleep_core::loss::WeightScheme;
use neurosleep_core::model::ModelConfig;
use neurosleep_core::train::TrainConfig;
use neurosleep_core::Stage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // model
    pub channels: usize,
    pub samples_per_epoch: usize,
    pub scales: usize,
    pub filters: usize,
    pub base_kernel: usize,
    pub pool: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub dropout: f64,
    pub sequence_length: usize,
    // training
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub train_batch: usize,
    pub val_batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub scheme: WeightScheme,
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_parts(&ModelConfig::default(), &TrainConfig::default())
    }
}

impl RunConfig {
    pub fn from_parts(m: &ModelConfig, t: &TrainConfig) -> Self {
        Self {
            channels: m.channels,
            samples_per_epoch: m.samples_per_epoch,
            scales: m.scales,
            filters: m.filters,
            base_kernel: m.base_kernel,
            pool: m.pool,
            encoder_layers: m.encoder_layers,
            heads: m.heads,
            ff_width: m.ff_width,
            dropout: m.dropout,
            sequence_length: m.sequence_length,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            train_batch: t.train_batch,
            val_batch: t.val_batch,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            scheme: t.scheme,
            folds: t.folds,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            channels: self.channels,
            samples_per_epoch: self.samples_per_epoch,
            scales: self.scales,
            filters: self.filters,
            base_kernel: self.base_kernel,
            pool: self.pool,
            encoder_layers: self.encoder_layers,
            heads: self.heads,
            ff_width: self.ff_width,
            dropout: self.dropout,
            sequence_length: self.sequence_length,
            classes: Stage::COUNT,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            train_batch: self.train_batch,
            val_batch: self.val_batch,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            scheme: self.scheme,
            folds: self.folds,
            sequence_length: self.sequence_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.train().validate()?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }
}

/// Command-line replacements for config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub sequence_length: Option<usize>,
    pub scheme: Option<WeightScheme>,
    pub scales: Option<usize>,
    pub encoder_layers: Option<usize>,
    pub max_epochs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.sequence_length {
            cfg.sequence_length = v;
        }
        if let Some(v) = self.scheme {
            cfg.scheme = v;
        }
        if let Some(v) = self.scales {
            cfg.scales = v;
        }
        if let Some(v) = self.encoder_layers {
            cfg.encoder_layers = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
    }
}

/// The file's config (or the defaults without one) with `overrides` applied
/// and validated.
pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(c.model(), ModelConfig::default());
    }

    #[test]
    fn missing_key_is_named() {
        let text = RunConfig::default().to_toml().replace("learning_rate = 0.001\n", "");
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let text = RunConfig::default().to_toml() + "learnin_rate = 1.0\n";
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("learnin_rate"), "{err}");
    }

    #[test]
    fn flags_win() {
        let mut c = RunConfig::default();
        Overrides {
            seed: Some(9),
            scheme: Some(WeightScheme::None),
            encoder_layers: Some(0),
            ..Overrides::default()
        }
        .apply(&mut c);
        assert_eq!((c.seed, c.scheme, c.encoder_layers), (9, WeightScheme::None, 0));
    }

    #[test]
    fn scheme_spelling() {
        let text = RunConfig::default().to_toml();
        assert!(text.contains("scheme = \"log_scaled\""));
    }
}
