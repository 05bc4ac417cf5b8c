//! Architecture configurations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PSPNet: initializer layer, mini dilated residual backbone (output
/// stride 4), pyramid pooling, and a conv head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PspConfig {
    /// Stacked perfusion channels; the initializer layer requires 5.
    pub in_channels: usize,
    /// Pyramid bin counts, strictly increasing.
    pub bins: Vec<usize>,
    /// Output channels of the three backbone stages.
    pub backbone_channels: Vec<usize>,
    /// Residual blocks per stage.
    pub blocks_per_stage: usize,
    /// Channels per pyramid level; `None` means final backbone channels / 4,
    /// so the concatenation doubles the channel count.
    pub n_psp: Option<usize>,
    /// Channels of the head's 3×3 conv; `None` means final backbone / 2.
    pub head_channels: Option<usize>,
    pub num_classes: usize,
    pub input_size: (usize, usize),
}

impl Default for PspConfig {
    fn default() -> Self {
        PspConfig {
            in_channels: 5,
            bins: vec![1, 2, 3, 6],
            backbone_channels: vec![16, 32, 64],
            blocks_per_stage: 1,
            n_psp: None,
            head_channels: None,
            num_classes: 2,
            input_size: (64, 64),
        }
    }
}

impl PspConfig {
    pub fn final_channels(&self) -> usize {
        *self.backbone_channels.last().expect("validated non-empty")
    }

    pub fn n_psp(&self) -> usize {
        self.n_psp.unwrap_or_else(|| (self.final_channels() / 4).max(1))
    }

    pub fn head_channels(&self) -> usize {
        self.head_channels.unwrap_or_else(|| (self.final_channels() / 2).max(1))
    }

    /// Spatial size of the backbone output: two stride-2 steps.
    pub fn feature_size(&self) -> (usize, usize) {
        let half = |v: usize| v.div_ceil(2);
        (half(half(self.input_size.0)), half(half(self.input_size.1)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 5 {
            return Err(Error::ConfigInvalid(format!(
                "the initializer layer takes 5 channels, config says {}",
                self.in_channels
            )));
        }
        if self.backbone_channels.len() != 3 || self.backbone_channels.contains(&0) {
            return Err(Error::ConfigInvalid(format!(
                "backbone_channels needs 3 positive stage widths, got {:?}",
                self.backbone_channels
            )));
        }
        if self.bins.is_empty() || self.bins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ConfigInvalid(format!(
                "bins must be strictly increasing and non-empty, got {:?}",
                self.bins
            )));
        }
        let (fh, fw) = self.feature_size();
        let max_bin = *self.bins.last().expect("non-empty");
        if max_bin > fh.min(fw) {
            return Err(Error::ConfigInvalid(format!(
                "largest bin {max_bin} exceeds backbone output {fh}×{fw}"
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::ConfigInvalid("need at least 2 classes".into()));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::ConfigInvalid("blocks_per_stage must be positive".into()));
        }
        Ok(())
    }
}

/// 2D U-Net: contracting conv/maxpool path, expanding transposed-conv path
/// with skip concatenations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnetConfig {
    pub in_channels: usize,
    /// Channels of the first encoder level; doubles per level.
    pub base_channels: usize,
    /// Number of pooling steps.
    pub levels: usize,
    pub num_classes: usize,
    pub input_size: (usize, usize),
}

impl Default for UnetConfig {
    fn default() -> Self {
        UnetConfig {
            in_channels: 5,
            base_channels: 16,
            levels: 4,
            num_classes: 2,
            input_size: (64, 64),
        }
    }
}

impl UnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.levels == 0 {
            return Err(Error::ConfigInvalid("all U-Net dimensions must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::ConfigInvalid("need at least 2 classes".into()));
        }
        let div = 1usize << self.levels;
        if !self.input_size.0.is_multiple_of(div) || !self.input_size.1.is_multiple_of(div) {
            return Err(Error::ConfigInvalid(format!(
                "input size {:?} not divisible by 2^{}",
                self.input_size, self.levels
            )));
        }
        Ok(())
    }
}

/// Tagged architecture configuration, as stored in checkpoints and the
/// experiment config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "lowercase")]
pub enum ModelConfig {
    Pspnet(PspConfig),
    Unet2d(UnetConfig),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Pspnet(PspConfig::default())
    }
}

impl ModelConfig {
    pub fn arch_tag(&self) -> &'static str {
        match self {
            ModelConfig::Pspnet(_) => "pspnet",
            ModelConfig::Unet2d(_) => "unet2d",
        }
    }

    pub fn input_size(&self) -> (usize, usize) {
        match self {
            ModelConfig::Pspnet(c) => c.input_size,
            ModelConfig::Unet2d(c) => c.input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Pspnet(c) => c.validate(),
            ModelConfig::Unet2d(c) => c.validate(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_psp_config_is_valid() {
        PspConfig::default().validate().unwrap();
        assert_eq!(PspConfig::default().n_psp(), 16);
        assert_eq!(PspConfig::default().feature_size(), (16, 16));
    }

    #[test]
    fn oversized_bins_rejected() {
        let cfg = PspConfig { input_size: (16, 16), ..PspConfig::default() };
        // Feature map is 4×4 but bins go up to 6.
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn unet_divisibility() {
        let ok = UnetConfig::default();
        ok.validate().unwrap();
        let bad = UnetConfig { input_size: (63, 63), ..UnetConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn model_config_round_trips_through_json() {
        let cfg = ModelConfig::Pspnet(PspConfig::default());
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
        assert!(s.contains("\"architecture\":\"pspnet\""));
    }
}
