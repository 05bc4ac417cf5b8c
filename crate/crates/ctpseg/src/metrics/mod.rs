//! Volumetric segmentation metrics with per-fold aggregation: DSC,
//! Hausdorff distance, ASSD, precision, recall, and absolute volume
//! difference.
//!
//! Distance metrics and precision/recall can be undefined (empty surface,
//! zero denominator); they carry flags instead of silent zeros and are
//! excluded from aggregates with exclusion counts reported.

mod report;
mod surface;

pub use report::{render_report_md, write_metrics_csv, write_report_md};
pub use surface::{assd, extract_surface, hausdorff, SurfaceSet};

use serde::{Deserialize, Serialize};

use crate::data::Mask3;
use crate::error::{Error, Result};

fn check_shapes(x: &Mask3, y: &Mask3) -> Result<()> {
    if (x.depth, x.height, x.width) != (y.depth, y.height, y.width) {
        return Err(Error::shape(format!(
            "mask {}×{}×{} vs {}×{}×{}",
            x.depth, x.height, x.width, y.depth, y.height, y.width
        )));
    }
    Ok(())
}

fn overlap_counts(x: &Mask3, y: &Mask3) -> (usize, usize, usize) {
    let mut nx = 0;
    let mut ny = 0;
    let mut inter = 0;
    for (&a, &b) in x.data.iter().zip(&y.data) {
        nx += (a != 0) as usize;
        ny += (b != 0) as usize;
        inter += (a != 0 && b != 0) as usize;
    }
    (nx, ny, inter)
}

/// Dice similarity coefficient `2|X∩Y| / (|X|+|Y|)`; 1.0 when both masks
/// are empty.
pub fn dsc(x: &Mask3, y: &Mask3) -> Result<f64> {
    check_shapes(x, y)?;
    let (nx, ny, inter) = overlap_counts(x, y);
    if nx + ny == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (nx + ny) as f64)
}

/// `(precision, recall)`; a zero denominator yields `None` for that side.
pub fn precision_recall(pred: &Mask3, truth: &Mask3) -> Result<(Option<f64>, Option<f64>)> {
    check_shapes(pred, truth)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fne = 0usize;
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => {}
        }
    }
    let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    let recall = (tp + fne > 0).then(|| tp as f64 / (tp + fne) as f64);
    Ok((precision, recall))
}

/// Absolute volume difference in milliliters: `||X|-|Y|| * voxel mm³ / 1000`.
pub fn avd(x: &Mask3, y: &Mask3, spacing: [f64; 3]) -> Result<f64> {
    check_shapes(x, y)?;
    let (nx, ny, _) = overlap_counts(x, y);
    let voxel_mm3 = spacing[0] * spacing[1] * spacing[2];
    Ok(nx.abs_diff(ny) as f64 * voxel_mm3 / 1000.0)
}

/// All six metrics for one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMetrics {
    pub scan_id: String,
    /// Fold the scan was validated in, when applicable.
    pub fold: Option<usize>,
    pub dsc: f64,
    pub hd_mm: Option<f64>,
    pub assd_mm: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub avd_ml: f64,
}

impl ScanMetrics {
    /// Names of the undefined metrics, `|`-joined for the CSV flag column.
    pub fn undefined_flags(&self) -> String {
        let mut flags = Vec::new();
        if self.hd_mm.is_none() {
            flags.push("hd");
        }
        if self.assd_mm.is_none() {
            flags.push("assd");
        }
        if self.precision.is_none() {
            flags.push("precision");
        }
        if self.recall.is_none() {
            flags.push("recall");
        }
        flags.join("|")
    }
}

/// Evaluate a prediction against ground truth.
///
/// Empty-mask policy: both empty → DSC 1.0 and zero distances; one empty →
/// DSC 0.0 and undefined-flagged distances.
pub fn evaluate_pair(
    scan_id: &str,
    pred: &Mask3,
    truth: &Mask3,
    spacing: [f64; 3],
) -> Result<ScanMetrics> {
    check_shapes(pred, truth)?;
    let d = dsc(pred, truth)?;
    let (precision, recall) = precision_recall(pred, truth)?;
    let volume = avd(pred, truth, spacing)?;

    let pred_empty = pred.foreground_count() == 0;
    let truth_empty = truth.foreground_count() == 0;
    let (hd_mm, assd_mm) = if pred_empty && truth_empty {
        (Some(0.0), Some(0.0))
    } else if pred_empty || truth_empty {
        (None, None)
    } else {
        let sp = extract_surface(pred, spacing);
        let st = extract_surface(truth, spacing);
        (Some(hausdorff(&sp, &st)?), Some(assd(&sp, &st)?))
    };

    Ok(ScanMetrics {
        scan_id: scan_id.to_string(),
        fold: None,
        dsc: d,
        hd_mm,
        assd_mm,
        precision,
        recall,
        avd_ml: volume,
    })
}

/// Mean and sample standard deviation (n−1 denominator; 0 for n = 1).
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n > 0, "mean of empty slice");
    // All-identical values have exactly zero deviation; computing through
    // the rounded mean would report ~1e-16 instead.
    if values.windows(2).all(|w| w[0] == w[1]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Aggregate of one metric across scans.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricAggregate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Records excluded because the metric was undefined there.
    pub excluded: usize,
    /// True when only one defined sample existed.
    pub single_sample: bool,
}

fn aggregate_metric<I>(values: I, total: usize) -> Option<MetricAggregate>
where
    I: Iterator<Item = Option<f64>>,
{
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        return None;
    }
    let (mean, std) = mean_and_sample_std(&defined);
    Some(MetricAggregate {
        mean,
        std,
        count: defined.len(),
        excluded: total - defined.len(),
        single_sample: defined.len() == 1,
    })
}

/// Per-group aggregate over all six metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAggregate {
    pub label: String,
    pub scans: usize,
    pub dsc: MetricAggregate,
    pub hd_mm: Option<MetricAggregate>,
    pub assd_mm: Option<MetricAggregate>,
    pub precision: Option<MetricAggregate>,
    pub recall: Option<MetricAggregate>,
    pub avd_ml: MetricAggregate,
}

/// How [`aggregate_report`] groups records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    PerFold,
    Overall,
}

/// Aggregated view over per-scan records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_scan: Vec<ScanMetrics>,
    pub groups: Vec<GroupAggregate>,
}

fn aggregate_group(records: &[&ScanMetrics], label: &str) -> Result<GroupAggregate> {
    if records.is_empty() {
        return Err(Error::EmptyGroup(label.to_string()));
    }
    let n = records.len();
    Ok(GroupAggregate {
        label: label.to_string(),
        scans: n,
        dsc: aggregate_metric(records.iter().map(|r| Some(r.dsc)), n)
            .expect("dsc always defined"),
        hd_mm: aggregate_metric(records.iter().map(|r| r.hd_mm), n),
        assd_mm: aggregate_metric(records.iter().map(|r| r.assd_mm), n),
        precision: aggregate_metric(records.iter().map(|r| r.precision), n),
        recall: aggregate_metric(records.iter().map(|r| r.recall), n),
        avd_ml: aggregate_metric(records.iter().map(|r| Some(r.avd_ml)), n)
            .expect("avd always defined"),
    })
}

/// Group per-scan records per fold or overall.
pub fn aggregate_report(records: &[ScanMetrics], grouping: Grouping) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::EmptyGroup("report".into()));
    }
    let mut groups = Vec::new();
    match grouping {
        Grouping::Overall => {
            let all: Vec<&ScanMetrics> = records.iter().collect();
            groups.push(aggregate_group(&all, "overall")?);
        }
        Grouping::PerFold => {
            let mut folds: Vec<usize> =
                records.iter().filter_map(|r| r.fold).collect();
            folds.sort_unstable();
            folds.dedup();
            for f in folds {
                let members: Vec<&ScanMetrics> =
                    records.iter().filter(|r| r.fold == Some(f)).collect();
                groups.push(aggregate_group(&members, &format!("fold {}", f + 1))?);
            }
            let all: Vec<&ScanMetrics> = records.iter().collect();
            groups.push(aggregate_group(&all, "overall")?);
        }
    }
    Ok(MetricsReport { per_scan: records.to_vec(), groups })
}
