//! `ctpseg eval`: score predicted masks against a ground-truth dataset.

use std::path::Path;

use ctpseg::data::load_dataset;
use ctpseg::metrics::{
    aggregate_report, evaluate_pair, write_metrics_csv, write_report_md, Grouping,
};
use ctpseg::{Error, Result};

use super::{read_prediction, scan_display_id};

pub fn run(
    pred_root: &Path,
    truth_manifest: &Path,
    out: &Path,
    spacing_override: Option<[f64; 3]>,
) -> Result<()> {
    let truth = load_dataset(truth_manifest)?;
    let mut records = Vec::with_capacity(truth.len());
    for scan in &truth {
        let pred = read_prediction(pred_root, scan)?;
        let spacing = spacing_override.unwrap_or(scan.spacing);
        records.push(evaluate_pair(&scan_display_id(scan), &pred, &scan.mask, spacing)?);
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let report = aggregate_report(&records, Grouping::Overall)?;
    write_metrics_csv(&records, out.join("metrics.csv"))?;
    write_report_md(&report, "evaluation", out.join("report.md"))?;
    let overall = &report.groups[0];
    println!(
        "evaluated {} scans: DSC {:.2} ± {:.2}; metrics in {}",
        overall.scans,
        overall.dsc.mean,
        overall.dsc.std,
        out.join("metrics.csv").display()
    );
    Ok(())
}
