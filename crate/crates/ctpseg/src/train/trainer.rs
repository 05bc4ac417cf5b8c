//! The training loop: RMSProp over mini-batches of slices, per-epoch
//! validation DSC, plateau scheduling with early stopping, best-checkpoint
//! tracking, and the two-phase fine-tuning procedure.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, Tape};
use crate::data::{AugmentParams, ScanStack, SliceSample, TrainStream};
use crate::error::{Error, Result};
use crate::losses::{estimate_w, LossConfig, LossKind};
use crate::metrics::dsc;
use crate::models::{
    save_checkpoint, Bound, CheckpointMeta, Mode, Model, ModelConfig, OptimizerMeta,
};

use super::predict::{foreground_prob, predict_mask};
use super::rmsprop::RmsProp;
use super::schedule::{ScheduleAction, ScheduleConfig, ScheduleState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stagnant epochs before each learning-rate reduction.
    pub plateau_epochs: usize,
    pub lr_reduce_factor: f64,
    /// Stagnant epochs before early stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub fine_tune: Option<FineTuneConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-3,
            batch_size: 8,
            max_epochs: 200,
            plateau_epochs: 20,
            lr_reduce_factor: 10.0,
            early_stop_patience: 50,
            seed: 0,
            loss: LossConfig::default(),
            fine_tune: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTuneConfig {
    /// Checkpoint supplying the pretrained backbone weights.
    pub pretrained: PathBuf,
    #[serde(default = "default_phase1_lr")]
    pub phase1_lr: f64,
    #[serde(default = "default_phase2_lr")]
    pub phase2_lr: f64,
    #[serde(default = "default_phase1_epochs")]
    pub phase1_epochs: usize,
}

fn default_phase1_lr() -> f64 {
    1e-2
}

fn default_phase2_lr() -> f64 {
    1e-4
}

fn default_phase1_epochs() -> usize {
    20
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.plateau_epochs >= self.early_stop_patience {
            return Err(Error::ConfigInvalid(format!(
                "plateau_epochs {} must be below early_stop_patience {}",
                self.plateau_epochs, self.early_stop_patience
            )));
        }
        let positive = self.initial_lr > 0.0
            && self.lr_reduce_factor > 1.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.plateau_epochs > 0;
        if !positive {
            return Err(Error::ConfigInvalid(
                "learning rates, batch size, and epoch counts must be positive".into(),
            ));
        }
        if let Some(ft) = &self.fine_tune {
            if ft.phase1_lr <= 0.0 || ft.phase2_lr <= 0.0 || ft.phase1_epochs == 0 {
                return Err(Error::ConfigInvalid("fine-tune phases must be positive".into()));
            }
        }
        self.loss.validate()
    }

    fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            plateau_epochs: self.plateau_epochs,
            early_stop_patience: self.early_stop_patience,
            lr_reduce_factor: self.lr_reduce_factor,
        }
    }
}

/// Training inputs for one fold: train slices plus the scans validation
/// DSC is computed on.
pub struct TrainData<'a> {
    pub train_slices: Vec<SliceSample>,
    pub val_scans: Vec<&'a ScanStack>,
    pub augment: AugmentParams,
}

/// One `train_log.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dsc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_dsc: f64,
    pub stopped_early: bool,
    pub best_path: PathBuf,
    pub last_path: PathBuf,
    pub log_path: PathBuf,
}

/// Resolve the class weight for weighted cross entropy from the training
/// split when the config leaves it unset.
fn resolve_loss(cfg: &TrainConfig, train_slices: &[SliceSample]) -> Result<LossConfig> {
    let mut loss = cfg.loss.clone();
    if loss.kind == LossKind::Wce && loss.w.is_none() {
        loss.w = Some(estimate_w(train_slices.iter().map(|s| s.label.as_slice()))?);
    }
    loss.validate()?;
    Ok(loss)
}

/// Mean validation DSC over scans (volume DSC per scan, then averaged).
pub fn validation_dsc<E: Element>(
    model: &mut Model<E>,
    val_scans: &[&ScanStack],
) -> Result<f64> {
    assert!(!val_scans.is_empty(), "validation needs at least one scan");
    let mut sum = 0.0;
    for scan in val_scans {
        let pred = predict_mask(model, scan)?;
        sum += dsc(&pred, &scan.mask)?;
    }
    Ok(sum / val_scans.len() as f64)
}

/// One optimization pass over an epoch's batches; returns the mean loss.
/// Mini-batches of a single slice are skipped: train-mode batch norm needs
/// at least two samples per channel.
fn train_epoch<E: Element>(
    model: &mut Model<E>,
    opt: &mut RmsProp<E>,
    stream: &TrainStream,
    epoch: usize,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    let batches = stream.epoch_batches::<E>(epoch);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (bi, batch) in batches.iter().enumerate() {
        if batch.len == 1 {
            continue;
        }
        let mut tape = Tape::new();
        let mut bound = Bound::new();
        let x = tape.leaf(&batch.input);
        let logits = model.forward(&mut tape, &mut bound, x, Mode::Train)?;
        let p = foreground_prob(&mut tape, logits)?;
        let y = tape.leaf(&batch.label);
        let loss = loss_cfg.apply(&mut tape, p, y)?;
        let loss_value = tape.value(loss)[0].as_f64();
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: bi, value: loss_value });
        }
        let mut grads = tape.backward(loss)?;
        let mut by_name: HashMap<&str, Vec<E>> = HashMap::new();
        for (name, node) in bound.entries() {
            if let Some(g) = grads.take(*node) {
                by_name.insert(name.as_str(), g);
            }
        }
        for param in model.params_mut() {
            if !param.trainable {
                continue;
            }
            if let Some(g) = by_name.get(param.name.as_str()) {
                opt.step(&param.name, param.value.data_mut(), g)?;
            }
        }
        sum += loss_value;
        n += 1;
    }
    if n == 0 {
        return Err(Error::ConfigInvalid(
            "every training batch had a single slice; grow the dataset or batch size".into(),
        ));
    }
    Ok(sum / n as f64)
}

struct BestTracker {
    best_dsc: f64,
    best_epoch: usize,
    path: PathBuf,
}

impl BestTracker {
    fn observe<E: Element>(
        &mut self,
        model: &Model<E>,
        epoch: usize,
        val_dsc: f64,
        opt_meta: OptimizerMeta,
    ) -> Result<bool> {
        if val_dsc > self.best_dsc {
            self.best_dsc = val_dsc;
            self.best_epoch = epoch;
            let meta = CheckpointMeta {
                epoch,
                best_val_dsc: val_dsc,
                optimizer: Some(opt_meta),
            };
            save_checkpoint(model, &meta, &self.path)?;
            return Ok(true);
        }
        Ok(false)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_phase<E: Element>(
    model: &mut Model<E>,
    opt: &mut RmsProp<E>,
    stream: &TrainStream,
    data: &TrainData<'_>,
    loss_cfg: &LossConfig,
    epochs: usize,
    epoch_offset: usize,
    schedule: Option<(&ScheduleConfig, &mut ScheduleState)>,
    best: &mut BestTracker,
    records: &mut Vec<EpochRecord>,
) -> Result<bool> {
    let mut schedule = schedule;
    for local in 0..epochs {
        let epoch = epoch_offset + local;
        let lr = opt.lr();
        let train_loss = train_epoch(model, opt, stream, epoch, loss_cfg)?;
        let val_dsc = validation_dsc(model, &data.val_scans)?;
        let opt_meta =
            OptimizerMeta { lr: opt.lr(), alpha: opt.alpha(), eps: opt.eps() };
        best.observe(model, epoch, val_dsc, opt_meta)?;
        records.push(EpochRecord { epoch, train_loss, val_dsc, lr });

        if let Some((cfg, state)) = schedule.as_mut() {
            state.lr_history.push(lr);
            match state.update(val_dsc, cfg) {
                ScheduleAction::Continue { .. } => {}
                ScheduleAction::ReduceLr => opt.set_lr(opt.lr() / cfg.lr_reduce_factor),
                ScheduleAction::Stop => return Ok(true),
            }
        }
    }
    Ok(false)
}

fn write_log(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_dsc,lr\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_dsc, r.lr));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn finish<E: Element>(
    model: &Model<E>,
    opt: &RmsProp<E>,
    records: Vec<EpochRecord>,
    best: BestTracker,
    stopped_early: bool,
    run_dir: &Path,
) -> Result<TrainOutcome> {
    let last_path = run_dir.join("last.ckpt");
    let last_meta = CheckpointMeta {
        epoch: records.last().map_or(0, |r| r.epoch),
        best_val_dsc: best.best_dsc,
        optimizer: Some(OptimizerMeta { lr: opt.lr(), alpha: opt.alpha(), eps: opt.eps() }),
    };
    save_checkpoint(model, &last_meta, &last_path)?;
    let log_path = run_dir.join("train_log.csv");
    write_log(&records, &log_path)?;
    Ok(TrainOutcome {
        records,
        best_epoch: best.best_epoch,
        best_val_dsc: best.best_dsc,
        stopped_early,
        best_path: best.path,
        last_path,
        log_path,
    })
}

/// Train a model from its current state under the plateau schedule,
/// persisting `best.ckpt`, `last.ckpt`, and `train_log.csv` in `run_dir`.
pub fn train<E: Element>(
    model: &mut Model<E>,
    cfg: &TrainConfig,
    data: &TrainData<'_>,
    run_dir: impl AsRef<Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let run_dir = run_dir.as_ref();
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    if data.val_scans.is_empty() {
        return Err(Error::EmptySplit { split: "val", fold: 0 });
    }
    let loss_cfg = resolve_loss(cfg, &data.train_slices)?;
    let stream = TrainStream {
        samples: data.train_slices.clone(),
        batch_size: cfg.batch_size,
        augment: data.augment.clone(),
        seed: cfg.seed,
    };
    let mut opt = RmsProp::new(cfg.initial_lr);
    let schedule_cfg = cfg.schedule();
    let mut schedule_state = ScheduleState::new();
    let mut best = BestTracker {
        best_dsc: f64::NEG_INFINITY,
        best_epoch: 0,
        path: run_dir.join("best.ckpt"),
    };
    let mut records = Vec::new();
    let stopped = run_phase(
        model,
        &mut opt,
        &stream,
        data,
        &loss_cfg,
        cfg.max_epochs,
        0,
        Some((&schedule_cfg, &mut schedule_state)),
        &mut best,
        &mut records,
    )?;
    finish(model, &opt, records, best, stopped, run_dir)
}

/// Parameter-name prefixes of the layers the transfer procedure replaces
/// (and therefore trains alone in phase 1): the initializer layer and the
/// final classifier.
pub fn new_layer_prefixes(arch_tag: &str) -> &'static [&'static str] {
    match arch_tag {
        "pspnet" => &["init.", "head.classifier."],
        "unet2d" => &["enc0.conv1.", "final."],
        _ => &[],
    }
}

/// Build a model from `model_cfg`, seed every layer the pretrained
/// checkpoint shares (everything but the replaced layers), then run the
/// two training phases: new layers alone at `phase1_lr`, then everything
/// under the standard schedule starting at `phase2_lr`.
pub fn fine_tune_two_phase<E: Element>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &TrainData<'_>,
    run_dir: impl AsRef<Path>,
) -> Result<(Model<E>, TrainOutcome)> {
    cfg.validate()?;
    let ft = cfg
        .fine_tune
        .clone()
        .ok_or_else(|| Error::ConfigInvalid("fine_tune section missing".into()))?;
    let run_dir = run_dir.as_ref();
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    if data.val_scans.is_empty() {
        return Err(Error::EmptySplit { split: "val", fold: 0 });
    }

    let (pretrained, _) = crate::models::load_checkpoint::<E>(&ft.pretrained)?;
    let mut model = Model::<E>::build(model_cfg, cfg.seed)?;
    if pretrained.arch_tag() != model.arch_tag() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "pretrained {} vs requested {}",
            pretrained.arch_tag(),
            model.arch_tag()
        )));
    }
    let prefixes = new_layer_prefixes(model.arch_tag());
    let is_new = |name: &str| prefixes.iter().any(|p| name.starts_with(p));

    // Copy the shared weights; the replaced layers keep their fresh init.
    {
        let pre_params: HashMap<&str, &crate::models::Param<E>> =
            pretrained.params().into_iter().map(|p| (p.name.as_str(), p)).collect();
        for p in model.params_mut() {
            if is_new(&p.name) {
                continue;
            }
            let src = pre_params.get(p.name.as_str()).ok_or_else(|| {
                Error::IncompatibleCheckpoint(format!("pretrained lacks {}", p.name))
            })?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "{}: pretrained shape {:?} vs {:?}",
                    p.name,
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        let pre_buffers: HashMap<String, &crate::autodiff::Tensor<E>> =
            pretrained.buffers().into_iter().collect();
        for (name, buf) in model.buffers_mut() {
            if is_new(&name) {
                continue;
            }
            let src = pre_buffers.get(&name).ok_or_else(|| {
                Error::IncompatibleCheckpoint(format!("pretrained lacks buffer {name}"))
            })?;
            *buf = (*src).clone();
        }
    }

    let loss_cfg = resolve_loss(cfg, &data.train_slices)?;
    let stream = TrainStream {
        samples: data.train_slices.clone(),
        batch_size: cfg.batch_size,
        augment: data.augment.clone(),
        seed: cfg.seed,
    };
    let mut best = BestTracker {
        best_dsc: f64::NEG_INFINITY,
        best_epoch: 0,
        path: run_dir.join("best.ckpt"),
    };
    let mut records = Vec::new();

    // Phase 1: only the new layers train, fixed learning rate.
    model.set_trainable("*", false)?;
    for p in prefixes {
        model.set_trainable(&format!("{p}*"), true)?;
    }
    let mut opt = RmsProp::new(ft.phase1_lr);
    run_phase(
        &mut model,
        &mut opt,
        &stream,
        data,
        &loss_cfg,
        ft.phase1_epochs,
        0,
        None,
        &mut best,
        &mut records,
    )?;

    // Phase 2: everything unfrozen under the standard schedule.
    model.set_trainable("*", true)?;
    let mut opt = RmsProp::new(ft.phase2_lr);
    let schedule_cfg = cfg.schedule();
    let mut schedule_state = ScheduleState::new();
    let stopped = run_phase(
        &mut model,
        &mut opt,
        &stream,
        data,
        &loss_cfg,
        cfg.max_epochs,
        ft.phase1_epochs,
        Some((&schedule_cfg, &mut schedule_state)),
        &mut best,
        &mut records,
    )?;
    let outcome = finish(&model, &opt, records, best, stopped, run_dir)?;
    Ok((model, outcome))
}
