//! Report emission: `metrics.csv` (one row per scan) and `report.md` with
//! per-fold and overall tables.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{mean_and_sample_std, MetricAggregate, MetricsReport, ScanMetrics};

/// One row per scan: `scan_id,dsc,hd_mm,assd_mm,precision,recall,avd_ml,
/// undefined_flags`. Undefined metrics leave their cell empty.
pub fn write_metrics_csv(records: &[ScanMetrics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path).map_err(Error::Csv)?;
    wtr.write_record([
        "scan_id",
        "dsc",
        "hd_mm",
        "assd_mm",
        "precision",
        "recall",
        "avd_ml",
        "undefined_flags",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        wtr.write_record([
            r.scan_id.clone(),
            r.dsc.to_string(),
            opt(r.hd_mm),
            opt(r.assd_mm),
            opt(r.precision),
            opt(r.recall),
            r.avd_ml.to_string(),
            r.undefined_flags(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn fmt_pm(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

fn fmt_agg(a: &Option<MetricAggregate>) -> String {
    match a {
        Some(a) if a.excluded > 0 => {
            format!("{} ({} excluded)", fmt_pm(a.mean, a.std), a.excluded)
        }
        Some(a) => fmt_pm(a.mean, a.std),
        None => "undefined".to_string(),
    }
}

/// Render the markdown report: a per-fold validation DSC table with both
/// total aggregations (mean over folds and mean over scans), then an
/// overall table across all six metrics.
pub fn render_report_md(report: &MetricsReport, title: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {title}\n\n"));

    let folds: Vec<&super::GroupAggregate> =
        report.groups.iter().filter(|g| g.label.starts_with("fold")).collect();
    if !folds.is_empty() {
        out.push_str("## Validation DSC per fold\n\n");
        out.push_str("| Fold | Scans | DSC |\n|---|---|---|\n");
        for g in &folds {
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                g.label.trim_start_matches("fold "),
                g.scans,
                fmt_pm(g.dsc.mean, g.dsc.std)
            ));
        }
        let fold_means: Vec<f64> = folds.iter().map(|g| g.dsc.mean).collect();
        let (m_folds, s_folds) = mean_and_sample_std(&fold_means);
        out.push_str(&format!(
            "| Total (mean over folds) | {} | {} |\n",
            report.per_scan.len(),
            fmt_pm(m_folds, s_folds)
        ));
        if let Some(overall) = report.groups.iter().find(|g| g.label == "overall") {
            out.push_str(&format!(
                "| Total (mean over scans) | {} | {} |\n",
                overall.scans,
                fmt_pm(overall.dsc.mean, overall.dsc.std)
            ));
        }
        out.push('\n');
    }

    if let Some(overall) = report.groups.iter().find(|g| g.label == "overall") {
        out.push_str("## Overall metrics\n\n");
        out.push_str("| DSC | HD (mm) | ASSD (mm) | Precision | Recall | AVD (ml) |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            fmt_pm(overall.dsc.mean, overall.dsc.std),
            fmt_agg(&overall.hd_mm),
            fmt_agg(&overall.assd_mm),
            fmt_agg(&overall.precision),
            fmt_agg(&overall.recall),
            fmt_agg(&Some(overall.avd_ml.clone())),
        ));
    }
    out
}

pub fn write_report_md(
    report: &MetricsReport,
    title: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_report_md(report, title)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::super::{aggregate_report, Grouping};
    use super::*;

    fn record(id: &str, fold: usize, dsc: f64) -> ScanMetrics {
        ScanMetrics {
            scan_id: id.into(),
            fold: Some(fold),
            dsc,
            hd_mm: Some(2.0),
            assd_mm: Some(1.0),
            precision: Some(0.8),
            recall: Some(0.7),
            avd_ml: 0.5,
        }
    }

    #[test]
    fn csv_row_shape_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = record("s1", 0, 0.5);
        r.hd_mm = None;
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&[r], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "scan_id,dsc,hd_mm,assd_mm,precision,recall,avd_ml,undefined_flags"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("s1,0.5,,1,"), "row: {row}");
        assert!(row.ends_with(",hd"));
    }

    #[test]
    fn report_md_has_fold_rows_and_totals() {
        // The per-fold DSC means from the 5-fold experiment.
        let dscs = [0.64, 0.42, 0.48, 0.55, 0.58];
        let records: Vec<ScanMetrics> = dscs
            .iter()
            .enumerate()
            .map(|(i, &d)| record(&format!("s{i}"), i, d))
            .collect();
        let report = aggregate_report(&records, Grouping::PerFold).unwrap();
        let md = render_report_md(&report, "cv report");
        assert!(md.contains("| 1 | 1 | 0.64 ± 0.00 |"));
        // Mean over folds equals mean over scans here (one scan per fold):
        // 0.534 ± 0.086 formatted to two decimals.
        assert!(md.contains("| Total (mean over folds) | 5 | 0.53 ± 0.09 |"), "{md}");
        assert!(md.contains("| Total (mean over scans) | 5 | 0.53 ± 0.09 |"));
        assert!(md.contains("## Overall metrics"));
        assert!(md.contains("| 0.53 ± 0.09 | 2.00 ± 0.00 | 1.00 ± 0.00 |"));
    }
}
