//! `ctpseg cv`: train one model per held-out fold and aggregate metrics.

use ctpseg::metrics::{
    aggregate_report, evaluate_pair, write_metrics_csv, write_report_md, Grouping, ScanMetrics,
};
use ctpseg::models::{load_checkpoint, Model};
use ctpseg::train::{predict_mask, train};
use ctpseg::{Error, Result};

use crate::config::ExperimentConfig;

use super::{fold_train_data, load_scans, metric_spacing, plan_folds, scan_display_id};

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    cfg.echo_into_run_dir()?;
    let scans = load_scans(cfg)?;
    let plan = plan_folds(cfg, &scans)?;

    let mut all_records: Vec<ScanMetrics> = Vec::new();
    let mut failures = Vec::new();
    for fold in 0..plan.k {
        match run_fold(cfg, &scans, &plan, fold) {
            Ok(mut records) => all_records.append(&mut records),
            Err(e) => {
                eprintln!("fold {fold} failed: {e}");
                failures.push(fold);
            }
        }
    }

    if !all_records.is_empty() {
        let report = aggregate_report(&all_records, Grouping::PerFold)?;
        write_metrics_csv(&all_records, cfg.run_dir.join("metrics.csv"))?;
        write_report_md(
            &report,
            &format!("{}-fold cross-validation", plan.k),
            cfg.run_dir.join("report.md"),
        )?;
        let overall = report.groups.iter().find(|g| g.label == "overall");
        if let Some(o) = overall {
            println!(
                "cross-validation DSC {:.2} ± {:.2} over {} scans; report in {}",
                o.dsc.mean,
                o.dsc.std,
                o.scans,
                cfg.run_dir.join("report.md").display()
            );
        }
    }
    if !failures.is_empty() {
        return Err(Error::ConfigInvalid(format!("folds {failures:?} failed")));
    }
    Ok(())
}

fn run_fold(
    cfg: &ExperimentConfig,
    scans: &[ctpseg::data::ScanStack],
    plan: &ctpseg::data::FoldPlan,
    fold: usize,
) -> Result<Vec<ScanMetrics>> {
    let data = fold_train_data(cfg, scans, plan, fold)?;
    let run_dir = cfg.run_dir.join(format!("fold{fold}"));
    let mut model = Model::<f32>::build(&cfg.model, cfg.model_seed().wrapping_add(fold as u64))?;
    let outcome = train(&mut model, &cfg.train, &data, &run_dir)?;
    println!(
        "fold {fold}: best val DSC {:.4} at epoch {}",
        outcome.best_val_dsc,
        outcome.best_epoch + 1
    );

    // Evaluate the best checkpoint on its held-out fold.
    let (mut best, _) = load_checkpoint::<f32>(&outcome.best_path)?;
    let mut records = Vec::new();
    for scan in &data.val_scans {
        let pred = predict_mask(&mut best, scan)?;
        let mut m =
            evaluate_pair(&scan_display_id(scan), &pred, &scan.mask, metric_spacing(cfg, scan))?;
        m.fold = Some(fold);
        records.push(m);
    }
    write_metrics_csv(&records, run_dir.join("metrics.csv"))?;
    Ok(records)
}
