use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyper-parameters. Every parameter shape and the full layer
/// chain follow from these fields alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// EEG input channels `C`.
    pub channels: usize,
    /// Samples per 30 s epoch `T` (3000 at 100 Hz).
    pub samples_per_epoch: usize,
    /// Parallel temporal scales `P`, 1..=5.
    pub scales: usize,
    /// Filters per convolution block `L`.
    pub filters: usize,
    /// Smallest temporal kernel `K₁`; scale `i` uses `i * K₁`.
    pub base_kernel: usize,
    /// Max-pool window `r`.
    pub pool: usize,
    /// Transformer encoder depth `N` (0 removes the encoder).
    pub encoder_layers: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub dropout: f64,
    /// Epochs per input `S`, 1..=5; inputs are `S` epochs laid end to end.
    pub sequence_length: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 2,
            samples_per_epoch: 3000,
            scales: 3,
            filters: 8,
            base_kernel: 25,
            pool: 12,
            encoder_layers: 2,
            heads: 4,
            ff_width: 2048,
            dropout: 0.25,
            sequence_length: 1,
            classes: 5,
        }
    }
}

impl ModelConfig {
    /// Single-channel variant: the spatial block disappears.
    pub fn univariate() -> Self {
        Self {
            channels: 1,
            ..Self::default()
        }
    }

    /// Input width `S * T`.
    pub fn input_width(&self) -> usize {
        self.sequence_length * self.samples_per_epoch
    }

    /// Width after the multi-scale stage's max-pool.
    pub fn pooled_width(&self) -> usize {
        self.input_width() / self.pool
    }

    /// Encoder sequence length `d_w`.
    pub fn seq_len(&self) -> usize {
        self.pooled_width() / self.pool
    }

    /// Encoder embedding width `d_h = L * C`.
    pub fn d_model(&self) -> usize {
        self.filters * self.channels
    }

    pub fn kernel_width(&self, scale: usize) -> usize {
        (scale + 1) * self.base_kernel
    }

    pub fn has_spatial(&self) -> bool {
        self.channels > 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("samples_per_epoch", self.samples_per_epoch),
            ("filters", self.filters),
            ("base_kernel", self.base_kernel),
            ("pool", self.pool),
            ("heads", self.heads),
            ("ff_width", self.ff_width),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(1..=5).contains(&self.scales) {
            return Err(Error::config("scales", format!("must lie in 1..=5, got {}", self.scales)));
        }
        if !(1..=5).contains(&self.sequence_length) {
            return Err(Error::config(
                "sequence_length",
                format!("must lie in 1..=5, got {}", self.sequence_length),
            ));
        }
        if self.classes < 2 {
            return Err(Error::config("classes", "need at least two classes"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", format!("must lie in [0, 1), got {}", self.dropout)));
        }
        if !self.d_model().is_multiple_of(self.heads) {
            return Err(Error::config(
                "heads",
                format!(
                    "embedding width L*C = {} is not divisible by {} heads",
                    self.d_model(),
                    self.heads
                ),
            ));
        }
        if self.seq_len() == 0 {
            return Err(Error::config(
                "pool",
                format!(
                    "input width {} pooled twice by {} leaves no encoder positions",
                    self.input_width(),
                    self.pool
                ),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dimensions() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.d_model(), 16);
        assert_eq!(c.seq_len(), 20);
        assert_eq!([c.kernel_width(0), c.kernel_width(1), c.kernel_width(2)], [25, 50, 75]);
        assert_eq!(ModelConfig::univariate().d_model(), 8);
    }

    #[test]
    fn five_epoch_sequence_length() {
        let c = ModelConfig {
            sequence_length: 5,
            ..ModelConfig::default()
        };
        assert_eq!(c.seq_len(), 104);
    }

    #[test]
    fn field_level_diagnostics() {
        let bad = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field: "heads", .. })));
        let bad = ModelConfig {
            scales: 6,
            ..ModelConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field: "scales", .. })));
        let bad = ModelConfig {
            samples_per_epoch: 100,
            ..ModelConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field: "pool", .. })));
        let bad = ModelConfig {
            dropout: 1.0,
            ..ModelConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field: "dropout", .. })));
    }
}
