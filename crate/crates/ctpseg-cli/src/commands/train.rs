//! `ctpseg train` and `ctpseg finetune`: one fold each.

use ctpseg::models::Model;
use ctpseg::train::{fine_tune_two_phase, train};
use ctpseg::{Error, Result};

use crate::config::ExperimentConfig;

use super::{fold_train_data, load_scans, plan_folds};

pub fn run_train(cfg: &ExperimentConfig, fold: usize) -> Result<()> {
    cfg.echo_into_run_dir()?;
    let scans = load_scans(cfg)?;
    let plan = plan_folds(cfg, &scans)?;
    let data = fold_train_data(cfg, &scans, &plan, fold)?;

    let mut model = Model::<f32>::build(&cfg.model, cfg.model_seed())?;
    let run_dir = cfg.run_dir.join(format!("fold{fold}"));
    let outcome = train(&mut model, &cfg.train, &data, &run_dir)?;
    println!(
        "fold {fold}: best val DSC {:.4} at epoch {} ({} epochs run{}); checkpoints in {}",
        outcome.best_val_dsc,
        outcome.best_epoch + 1,
        outcome.records.len(),
        if outcome.stopped_early { ", stopped early" } else { "" },
        run_dir.display()
    );
    Ok(())
}

pub fn run_finetune(cfg: &ExperimentConfig, fold: usize) -> Result<()> {
    if cfg.train.fine_tune.is_none() {
        return Err(Error::ConfigInvalid(
            "finetune needs train.fine_tune (or --pretrained)".into(),
        ));
    }
    cfg.echo_into_run_dir()?;
    let scans = load_scans(cfg)?;
    let plan = plan_folds(cfg, &scans)?;
    let data = fold_train_data(cfg, &scans, &plan, fold)?;

    let run_dir = cfg.run_dir.join(format!("fold{fold}"));
    let (_, outcome) = fine_tune_two_phase::<f32>(&cfg.model, &cfg.train, &data, &run_dir)?;
    let phase1 = cfg.train.fine_tune.as_ref().map_or(0, |ft| ft.phase1_epochs);
    println!(
        "fold {fold}: fine-tuned {} phase-1 + {} phase-2 epochs, best val DSC {:.4}; \
         checkpoints in {}",
        phase1,
        outcome.records.len().saturating_sub(phase1),
        outcome.best_val_dsc,
        run_dir.display()
    );
    Ok(())
}
