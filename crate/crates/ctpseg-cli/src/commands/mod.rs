//! Subcommand implementations and shared plumbing.

pub mod cv;
pub mod eval;
pub mod predict;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ctpseg::data::{
    load_dataset, make_folds, split_scans, split_slices, synth_generate, FoldPlan, ScanStack,
    Split,
};
use ctpseg::train::TrainData;
use ctpseg::{Error, Result};

use crate::config::ExperimentConfig;

/// Directory name a scan's artifacts live under.
pub fn scan_dir_name(stack: &ScanStack) -> String {
    format!("{}_{}", stack.subject_id, stack.scan_id)
}

/// Human-readable scan identifier for reports.
pub fn scan_display_id(stack: &ScanStack) -> String {
    format!("{}/{}", stack.subject_id, stack.scan_id)
}

/// Load the dataset the config points at: manifest first, else synthetic.
pub fn load_scans(cfg: &ExperimentConfig) -> Result<Vec<ScanStack>> {
    if let Some(manifest) = &cfg.data.manifest {
        let scans = load_dataset(manifest)?;
        for s in &scans {
            for w in s.warnings() {
                eprintln!("warning: {w}");
            }
        }
        return Ok(scans);
    }
    let synth = cfg
        .data
        .synth
        .as_ref()
        .ok_or_else(|| Error::ConfigInvalid("no data source configured".into()))?;
    Ok(synth_generate(synth))
}

/// Fold plan over the dataset's subjects.
pub fn plan_folds(cfg: &ExperimentConfig, scans: &[ScanStack]) -> Result<FoldPlan> {
    let subjects: Vec<String> = scans.iter().map(|s| s.subject_id.clone()).collect();
    make_folds(&subjects, cfg.data.folds, cfg.fold_seed())
}

/// Assemble the training inputs for one held-out fold.
pub fn fold_train_data<'a>(
    cfg: &ExperimentConfig,
    scans: &'a [ScanStack],
    plan: &FoldPlan,
    fold: usize,
) -> Result<TrainData<'a>> {
    if fold >= plan.k {
        return Err(Error::ConfigInvalid(format!(
            "fold {fold} out of range for {} folds",
            plan.k
        )));
    }
    let train_slices = split_slices(scans, plan, fold, Split::Train)?;
    let val_scans = split_scans(scans, plan, fold, Split::Val);
    if val_scans.is_empty() {
        return Err(Error::EmptySplit { split: "val", fold });
    }
    if let Some(first) = train_slices.first() {
        let (h, w) = cfg.model.input_size();
        if (first.height, first.width) != (h, w) {
            return Err(Error::ConfigInvalid(format!(
                "dataset slices are {}×{}, model input_size is {h}×{w}",
                first.height, first.width
            )));
        }
    }
    Ok(TrainData { train_slices, val_scans, augment: cfg.data.augment.clone() })
}

/// Spacing used for metrics: config override or the scan's own.
pub fn metric_spacing(cfg: &ExperimentConfig, scan: &ScanStack) -> [f64; 3] {
    cfg.metrics.spacing.unwrap_or(scan.spacing)
}

/// `meta.json` written next to predicted masks.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionMeta {
    pub format_version: u32,
    pub subject_id: String,
    pub scan_id: String,
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
}

/// Write `mask.raw` (+ `meta.json`) for one scan's prediction.
pub fn write_prediction(
    out_root: &Path,
    stack: &ScanStack,
    mask: &ctpseg::data::Mask3,
) -> Result<PathBuf> {
    let dir = out_root.join(scan_dir_name(stack));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let meta = PredictionMeta {
        format_version: ctpseg::data::STACK_FORMAT_VERSION,
        subject_id: stack.subject_id.clone(),
        scan_id: stack.scan_id.clone(),
        shape: [mask.depth, mask.height, mask.width],
        spacing: stack.spacing,
    };
    let meta_path = dir.join("meta.json");
    std::fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?)
        .map_err(|e| Error::io(&meta_path, e))?;
    let mask_path = dir.join("mask.raw");
    std::fs::write(&mask_path, &mask.data).map_err(|e| Error::io(&mask_path, e))?;
    Ok(dir)
}

/// Read a predicted mask for a truth scan from a predictions root.
pub fn read_prediction(pred_root: &Path, stack: &ScanStack) -> Result<ctpseg::data::Mask3> {
    let (d, h, w) = stack.dims();
    let path = pred_root.join(scan_dir_name(stack)).join("mask.raw");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != d * h * w {
        return Err(Error::shape(format!(
            "{}: prediction has {} voxels, truth {}",
            path.display(),
            bytes.len(),
            d * h * w
        )));
    }
    if bytes.iter().any(|&b| b > 1) {
        return Err(Error::NonBinaryLabel(
            bytes.iter().find(|&&b| b > 1).copied().unwrap_or(0) as f64,
        ));
    }
    Ok(ctpseg::data::Mask3 { depth: d, height: h, width: w, data: bytes })
}
