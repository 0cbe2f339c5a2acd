//! Model hyperparameters and the shape algebra derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::SsmBlockConfig;

/// Everything needed to build the two-branch classifier deterministically.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Patch side `s` (odd).
    pub patch_size: usize,
    /// Spectral channels entering the HSI branch (after preprocessing).
    pub hsi_channels: usize,
    /// Channels entering the elevation branch.
    pub lidar_channels: usize,
    /// Token width `D` (divisible by 4 for the positional table).
    pub token_width: usize,
    /// SSM state count `N`.
    pub state_size: usize,
    /// Self-scan layers per branch before fusion.
    pub encoder_layers: usize,
    /// Cross-state fusion layers.
    pub fusion_layers: usize,
    /// Classes `K` (labels run 1..=K).
    pub num_classes: usize,
    /// Spectral extent of the 3-D conv kernel (spatial extent is 3x3).
    pub spectral_kernel: usize,
    /// Spectral stride of the 3-D conv.
    pub spectral_stride: usize,
    /// Output channels of the 3-D conv.
    pub spectral_channels: usize,
    /// Hidden channels between the two elevation convs.
    pub lidar_hidden: usize,
    /// Square kernel of the tokenizer conv (odd; stride 1, padded to keep
    /// the grid at `s`).
    pub tokenizer_kernel: usize,
    /// Parameter initialization seed.
    pub seed: u64,
    /// Ablation: replace both conv extractors with per-pixel linear lifts.
    pub linear_extractors: bool,
    /// Ablation: drop the CLS exchange and run the fusion-depth layers as
    /// independent per-branch scans instead.
    pub no_fusion: bool,
}

impl ModelConfig {
    /// Paper-scale defaults for a preprocessed scene (30 spectral channels,
    /// 5 elevation channels).
    pub fn default_for(num_classes: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            patch_size: 11,
            hsi_channels: 30,
            lidar_channels: 5,
            token_width: 64,
            state_size: 16,
            encoder_layers: 2,
            fusion_layers: 2,
            num_classes,
            spectral_kernel: 7,
            spectral_stride: 2,
            spectral_channels: 8,
            lidar_hidden: 32,
            tokenizer_kernel: 3,
            seed,
            linear_extractors: false,
            no_fusion: false,
        }
    }

    /// Desk-scale preset for fast tests and gradient checks.
    pub fn tiny(num_classes: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            patch_size: 5,
            hsi_channels: 8,
            lidar_channels: 5,
            token_width: 8,
            state_size: 4,
            encoder_layers: 1,
            fusion_layers: 1,
            num_classes,
            spectral_kernel: 7,
            spectral_stride: 2,
            spectral_channels: 4,
            lidar_hidden: 6,
            tokenizer_kernel: 3,
            seed,
            linear_extractors: false,
            no_fusion: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size % 2 == 0 {
            return Err(Error::Config(format!(
                "patch size {} must be odd",
                self.patch_size
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.token_width % 4 != 0 || self.token_width == 0 {
            return Err(Error::Config(format!(
                "token width {} must be a positive multiple of 4",
                self.token_width
            )));
        }
        if self.tokenizer_kernel % 2 == 0 {
            return Err(Error::Config("tokenizer kernel must be odd".into()));
        }
        if !self.linear_extractors && self.hsi_channels < self.spectral_kernel {
            return Err(Error::Config(format!(
                "{} spectral channels cannot carry a {}-deep kernel",
                self.hsi_channels, self.spectral_kernel
            )));
        }
        if self.spectral_stride == 0 || self.state_size == 0 {
            return Err(Error::Config("strides and state size must be positive".into()));
        }
        if self.hsi_channels == 0 || self.lidar_channels == 0 {
            return Err(Error::Config("both modalities need at least one channel".into()));
        }
        Ok(())
    }

    /// Tokenizer output grid side; the conv is stride-1 and shape-preserving.
    pub fn grid(&self) -> usize {
        self.patch_size
    }

    /// Feature tokens per patch, before the CLS row.
    pub fn token_count(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Spectral extent after the strided 3-D conv.
    pub fn spectral_out(&self) -> usize {
        (self.hsi_channels - self.spectral_kernel) / self.spectral_stride + 1
    }

    /// Channels entering the HSI branch's 2-D conv.
    pub fn flattened_channels(&self) -> usize {
        self.spectral_channels * self.spectral_out()
    }

    /// Width configuration of every scan block in the model.
    pub fn block(&self) -> SsmBlockConfig {
        SsmBlockConfig {
            d: self.token_width,
            d_in: self.token_width,
            n: self.state_size,
        }
    }

    /// Output shape of every pipeline stage for one sample, as
    /// (stage name, shape) pairs. A pure function of the config.
    pub fn stage_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let s = self.patch_size;
        let d = self.token_width;
        let l = self.token_count();
        let mut table = vec![("hsi_patch", vec![1, s, s, self.hsi_channels])];
        if !self.linear_extractors {
            table.push((
                "hsi_conv3",
                vec![1, self.spectral_channels, self.spectral_out(), s, s],
            ));
        }
        table.extend([
            ("hsi_features", vec![1, d, s, s]),
            ("lidar_features", vec![1, d, s, s]),
            ("tokens", vec![1, l, d]),
            ("with_cls", vec![1, l + 1, d]),
            ("encoded", vec![1, l + 1, d]),
            ("fused", vec![1, l + 1, d]),
            ("cls", vec![1, d]),
            ("logits", vec![1, self.num_classes]),
        ]);
        table
    }
}
