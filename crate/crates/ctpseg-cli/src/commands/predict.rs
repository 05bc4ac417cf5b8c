//! `ctpseg predict` and `ctpseg ensemble`: write predicted mask volumes,
//! optionally with per-slice PNG overlays for qualitative review.

use std::path::Path;

use ctpseg::data::{load_dataset, Mask3, ScanStack};
use ctpseg::models::{load_checkpoint, Model};
use ctpseg::train::{ensemble_predict, predict_mask, EnsembleRule};
use ctpseg::{Error, Result};

use super::write_prediction;

pub fn run_predict(
    checkpoint: &Path,
    manifest: &Path,
    out: &Path,
    png: bool,
) -> Result<()> {
    let (mut model, _) = load_checkpoint::<f32>(checkpoint)?;
    let scans = load_dataset(manifest)?;
    for scan in &scans {
        let mask = predict_mask(&mut model, scan)?;
        let dir = write_prediction(out, scan, &mask)?;
        if png {
            write_overlays(&dir, scan, &mask)?;
        }
    }
    println!("predicted {} scans into {}", scans.len(), out.display());
    Ok(())
}

pub fn run_ensemble(
    checkpoints: &[std::path::PathBuf],
    manifest: &Path,
    out: &Path,
    rule: EnsembleRule,
    png: bool,
) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut models: Vec<Model<f32>> = Vec::with_capacity(checkpoints.len());
    for path in checkpoints {
        models.push(load_checkpoint::<f32>(path)?.0);
    }
    let scans = load_dataset(manifest)?;
    for scan in &scans {
        let mask = ensemble_predict(&mut models, scan, rule)?;
        let dir = write_prediction(out, scan, &mask)?;
        if png {
            write_overlays(&dir, scan, &mask)?;
        }
    }
    println!(
        "ensembled {} models over {} scans into {}",
        models.len(),
        scans.len(),
        out.display()
    );
    Ok(())
}

/// Per-slice overlay: the CT channel as grayscale with predicted lesion
/// pixels tinted red.
fn write_overlays(dir: &Path, scan: &ScanStack, mask: &Mask3) -> Result<()> {
    let (d, h, w) = scan.dims();
    let ct = &scan.channels[0];
    for z in 0..d {
        let slice = ct.slice(z);
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for &v in slice {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = if hi > lo { hi - lo } else { 1.0 };
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let gray = (((slice[y * w + x] - lo) / range) * 255.0) as u8;
                let px = if mask.slice(z)[y * w + x] != 0 {
                    image::Rgb([128u8.saturating_add(gray / 2), gray / 2, gray / 2])
                } else {
                    image::Rgb([gray, gray, gray])
                };
                img.put_pixel(x as u32, y as u32, px);
            }
        }
        let path = dir.join(format!("overlay_z{z:02}.png"));
        img.save(&path)?;
    }
    Ok(())
}
