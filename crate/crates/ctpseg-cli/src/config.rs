//! The experiment configuration file: one JSON document covering model,
//! data, training, metrics, and ensembling. Unknown keys are rejected,
//! every field has a default, and the resolved document is echoed into the
//! run directory so a run can be reproduced from its own output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ctpseg::data::{AugmentParams, SynthConfig};
use ctpseg::models::ModelConfig;
use ctpseg::train::{EnsembleRule, TrainConfig};
use ctpseg::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; drives fold assignment, weight init, and shuffling.
    pub seed: u64,
    pub run_dir: PathBuf,
    pub model: ModelConfig,
    pub data: DataSection,
    pub train: TrainConfig,
    pub metrics: MetricsSection,
    pub ensemble: EnsembleSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            run_dir: PathBuf::from("runs/experiment"),
            model: ModelConfig::default(),
            data: DataSection::default(),
            train: TrainConfig::default(),
            metrics: MetricsSection::default(),
            ensemble: EnsembleSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset manifest (`manifest.csv`); takes precedence over `synth`.
    pub manifest: Option<PathBuf>,
    /// In-memory synthetic dataset used when no manifest is given.
    pub synth: Option<SynthConfig>,
    /// Fold count for cross-validation and single-fold training.
    pub folds: usize,
    pub augment: AugmentParams,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            manifest: None,
            synth: None,
            folds: 5,
            augment: AugmentParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    /// Voxel spacing override in mm; `null` uses each scan's own spacing.
    pub spacing: Option<[f64; 3]>,
    /// Handling of undefined distance metrics; only `flagged` exists:
    /// undefined values carry flags and are excluded from aggregates.
    pub empty_mask_policy: String,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection { spacing: None, empty_mask_policy: "flagged".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub rule: EnsembleRule,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_slice(&bytes)?;
        Ok(cfg)
    }

    /// Normalize derived fields: the experiment seed feeds training.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.folds == 0 {
            return Err(Error::ConfigInvalid("data.folds must be positive".into()));
        }
        if self.metrics.empty_mask_policy != "flagged" {
            return Err(Error::ConfigInvalid(format!(
                "unknown metrics.empty_mask_policy {:?}; only \"flagged\" exists",
                self.metrics.empty_mask_policy
            )));
        }
        if self.data.manifest.is_none() && self.data.synth.is_none() {
            return Err(Error::ConfigInvalid(
                "configure either data.manifest or data.synth".into(),
            ));
        }
        Ok(())
    }

    /// Seeds derived from the master seed for each deterministic stage.
    pub fn fold_seed(&self) -> u64 {
        self.seed
    }

    pub fn model_seed(&self) -> u64 {
        self.seed.wrapping_add(0x0005_EED1)
    }

    /// Write the resolved config verbatim into the run directory.
    pub fn echo_into_run_dir(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.run_dir).map_err(|e| Error::io(&self.run_dir, e))?;
        let path = self.run_dir.join("config.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Markdown reference for every config key, generated from the defaults.
pub fn render_config_reference() -> String {
    // The raw defaults; a usable config additionally needs one of
    // data.manifest or data.synth.
    let defaults =
        serde_json::to_string_pretty(&ExperimentConfig::default()).unwrap_or_default();
    let rows: &[(&str, &str)] = &[
        ("seed", "master seed; fold assignment, weight init, and shuffling derive from it"),
        ("run_dir", "output directory for checkpoints, logs, reports, and the echoed config"),
        ("model.architecture", "`pspnet` or `unet2d`; sibling keys configure the chosen one"),
        ("model.in_channels", "input channels; the PSPNet initializer layer requires 5"),
        ("model.bins", "pyramid bin counts, strictly increasing (pspnet)"),
        ("model.backbone_channels", "three backbone stage widths (pspnet)"),
        ("model.blocks_per_stage", "residual blocks per backbone stage (pspnet)"),
        ("model.n_psp", "channels per pyramid level; null = final backbone channels / 4"),
        ("model.head_channels", "head 3×3 conv width; null = final backbone channels / 2"),
        ("model.base_channels", "first encoder width, doubling per level (unet2d)"),
        ("model.levels", "pooling steps; input size must divide 2^levels (unet2d)"),
        ("model.num_classes", "output classes (2: background, lesion)"),
        ("model.input_size", "slice size [H, W] the network is built for"),
        ("data.manifest", "dataset manifest.csv; takes precedence over data.synth"),
        ("data.synth", "synthetic dataset settings (subjects, size, seed, lesion fraction)"),
        ("data.folds", "fold count for cv and for single-fold train/finetune"),
        ("data.augment.enabled", "toggle training-time augmentation"),
        ("data.augment.rotate_deg", "rotation range ±deg"),
        ("data.augment.translate_frac", "translation range ± fraction of image size"),
        ("data.augment.flip_prob", "flip probability per in-plane axis"),
        ("data.augment.scale_range", "scale factor range [lo, hi]"),
        ("train.initial_lr", "scratch-training learning rate"),
        ("train.batch_size", "slices per mini-batch"),
        ("train.max_epochs", "epoch budget per fold"),
        ("train.plateau_epochs", "stagnant epochs before each lr reduction"),
        ("train.lr_reduce_factor", "divisor applied at each reduction"),
        ("train.early_stop_patience", "stagnant epochs before early stopping"),
        ("train.loss.kind", "`ce`, `wce`, or `focal`"),
        ("train.loss.gamma", "focal focusing parameter"),
        ("train.loss.w", "wce lesion weight; null = estimated from the training split"),
        ("train.loss.invert_weight", "swap w and 1−w (conventional imbalance correction)"),
        ("train.loss.clamp_eps", "probability clamp before logarithms"),
        ("train.fine_tune.pretrained", "checkpoint path for two-phase fine-tuning"),
        ("train.fine_tune.phase1_lr", "phase-1 rate (new layers only)"),
        ("train.fine_tune.phase2_lr", "phase-2 rate (everything unfrozen)"),
        ("train.fine_tune.phase1_epochs", "phase-1 epoch count"),
        ("metrics.spacing", "voxel spacing override [sx, sy, sz] mm; null = scan spacing"),
        ("metrics.empty_mask_policy", "`flagged`: undefined metrics carry flags, excluded from aggregates"),
        ("ensemble.rule", "`mean_probability` (threshold 0.5) or `majority_vote`"),
    ];
    let mut out = String::from("# Experiment config reference\n\n");
    out.push_str("One JSON document; unknown keys are rejected. Command-line flags\n");
    out.push_str("override file values, which override the defaults below.\n\n");
    out.push_str("| Key | Meaning |\n|---|---|\n");
    for (key, meaning) in rows {
        out.push_str(&format!("| `{key}` | {meaning} |\n"));
    }
    out.push_str("\n## Defaults (resolved)\n\n```json\n");
    out.push_str(&defaults);
    out.push_str("\n```\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig {
            data: DataSection {
                synth: Some(SynthConfig::default()),
                ..DataSection::default()
            },
            ..ExperimentConfig::default()
        }
        .resolve()
        .unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"seed": 1, "bogus_key": true}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
    }

    #[test]
    fn needs_a_data_source() {
        let cfg = ExperimentConfig::default();
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn reference_mentions_every_section() {
        let text = render_config_reference();
        for key in ["seed", "model.architecture", "data.folds", "train.loss.kind", "ensemble.rule"]
        {
            assert!(text.contains(key), "missing {key}");
        }
    }
}
