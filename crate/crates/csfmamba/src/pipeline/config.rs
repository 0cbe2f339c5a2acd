//! Run configuration: the training schedule and the four-section config
//! file (model, train, preprocess, split) consumed by the command line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{PreprocessConfig, SplitSpec, TrainSize, DERIVED_LIDAR_CHANNELS};
use crate::error::{Error, Result};
use crate::net::ModelConfig;

/// Arithmetic width of the training run. 32-bit halves memory traffic and
/// is the everyday default; gradient checks and bit-determinism demands run
/// in 64-bit, where tolerances actually mean something.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionMode {
    F32,
    F64,
}

/// Optimization schedule. The learning rate steps down by `lr_decay` once
/// every `decay_period` epochs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub decay_period: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: PrecisionMode,
}

impl TrainConfig {
    /// Full-scale schedule: batch 256, Adam at 5e-4, halving every 50
    /// epochs, 200 epochs.
    pub fn full(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 256,
            learning_rate: 5e-4,
            lr_decay: 0.5,
            decay_period: 50,
            epochs: 200,
            seed,
            precision: PrecisionMode::F32,
        }
    }

    /// Desk-scale schedule for synthetic scenes: batch 32, 64-bit for
    /// reproducible-to-the-bit runs.
    pub fn desk(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            learning_rate: 5e-4,
            lr_decay: 0.5,
            decay_period: 50,
            epochs: 300,
            seed,
            precision: PrecisionMode::F64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr decay {} outside (0, 1]",
                self.lr_decay
            )));
        }
        if self.decay_period == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "decay period and epoch count must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate in force during `epoch` (0-based):
    /// `learning_rate * lr_decay^(epoch / decay_period)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_period) as i32)
    }
}

/// Everything one run needs, as stored in the JSON config file: the four
/// sections keep exactly the field names of their types.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub split: SplitSpec,
    /// Ablation: skip band selection, PCA, elevation derivatives, and
    /// standardization; feed the first `model.hsi_channels` raw bands and
    /// the raw elevation channels directly.
    #[serde(default)]
    pub bypass_preprocess: bool,
}

impl PipelineConfig {
    /// Desk-scale preset for synthetic scenes: tiny model over 8 spectral
    /// channels from 16 selected bands, 16 training samples per class.
    pub fn desk(num_classes: usize, seed: u64) -> PipelineConfig {
        PipelineConfig {
            model: ModelConfig::tiny(num_classes, seed),
            train: TrainConfig::desk(seed),
            preprocess: PreprocessConfig {
                mi_top_bands: 16,
                pca_components: 8,
                mi_histogram_bins: 32,
                lidar_window: 5,
                standardize: true,
            },
            split: SplitSpec {
                train: TrainSize::PerClass(16),
                seed,
            },
            bypass_preprocess: false,
        }
    }

    /// Full-scale preset: the default model over 30 spectral channels from
    /// 48 selected bands, 20 training samples per class.
    pub fn full(num_classes: usize, seed: u64) -> PipelineConfig {
        PipelineConfig {
            model: ModelConfig::default_for(num_classes, seed),
            train: TrainConfig::full(seed),
            preprocess: PreprocessConfig::default(),
            split: SplitSpec {
                train: TrainSize::PerClass(20),
                seed,
            },
            bypass_preprocess: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !self.bypass_preprocess {
            if self.preprocess.pca_components != self.model.hsi_channels {
                return Err(Error::Config(format!(
                    "preprocessing yields {} spectral channels but the model expects {}",
                    self.preprocess.pca_components, self.model.hsi_channels
                )));
            }
            if self.model.lidar_channels != DERIVED_LIDAR_CHANNELS {
                return Err(Error::Config(format!(
                    "elevation preprocessing yields {DERIVED_LIDAR_CHANNELS} channels but the model expects {}",
                    self.model.lidar_channels
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
