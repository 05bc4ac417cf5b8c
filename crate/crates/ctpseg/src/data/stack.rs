//! Scan stacks on disk.
//!
//! A stack directory holds `meta.json` plus six raw payloads: the five
//! perfusion channels (`ct`, `cbf`, `cbv`, `mtt`, `tmax`) as little-endian
//! `f32`, slice-major, and `mask.raw` as bytes 0/1. A dataset is a
//! `manifest.csv` (`subject_id,scan_id,path`) next to the stack dirs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STACK_FORMAT_VERSION: u32 = 1;
pub const CHANNEL_NAMES: [&str; 5] = ["ct", "cbf", "cbv", "mtt", "tmax"];

/// One `depth×H×W` volume of 32-bit floats, slice-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn zeros(depth: usize, height: usize, width: usize) -> Self {
        Volume { depth, height, width, data: vec![0.0; depth * height * width] }
    }

    pub fn slice(&self, d: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[d * hw..(d + 1) * hw]
    }
}

/// Binary mask volume, one byte per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask3 {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask3 {
    pub fn zeros(depth: usize, height: usize, width: usize) -> Self {
        Mask3 { depth, height, width, data: vec![0; depth * height * width] }
    }

    pub fn slice(&self, d: usize) -> &[u8] {
        let hw = self.height * self.width;
        &self.data[d * hw..(d + 1) * hw]
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// One scan slab: five co-registered channel volumes, the lesion mask, and
/// voxel spacing in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanStack {
    pub subject_id: String,
    pub scan_id: String,
    pub channels: [Volume; 5],
    pub mask: Mask3,
    pub spacing: [f64; 3],
}

impl ScanStack {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.mask.depth, self.mask.height, self.mask.width)
    }

    /// Hard invariants: consistent shapes, binary mask, depth ≥ 1.
    pub fn validate(&self) -> Result<()> {
        let (d, h, w) = self.dims();
        if d == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("degenerate stack dims {d}×{h}×{w}")));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if (c.depth, c.height, c.width) != (d, h, w) || c.data.len() != d * h * w {
                return Err(Error::shape(format!(
                    "channel {} is {}×{}×{}, mask is {d}×{h}×{w}",
                    CHANNEL_NAMES[i], c.depth, c.height, c.width
                )));
            }
        }
        if self.mask.data.len() != d * h * w {
            return Err(Error::shape("mask payload length"));
        }
        if !self.mask.is_binary() {
            let bad = self.mask.data.iter().find(|&&v| v > 1).copied().unwrap_or(0);
            return Err(Error::NonBinaryLabel(bad as f64));
        }
        Ok(())
    }

    /// Soft warnings (depth below the smallest slab seen in practice).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.mask.depth < 2 {
            out.push(format!(
                "{}/{}: slab depth {} below the expected minimum of 2",
                self.subject_id, self.scan_id, self.mask.depth
            ));
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StackMeta {
    format_version: u32,
    subject_id: String,
    scan_id: String,
    shape: [usize; 3],
    spacing: [f64; 3],
    channel_names: Vec<String>,
}

/// Write a stack directory; creates `directory` if needed.
pub fn write_stack(stack: &ScanStack, directory: impl AsRef<Path>) -> Result<()> {
    stack.validate()?;
    let dir = directory.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (d, h, w) = stack.dims();

    let meta = StackMeta {
        format_version: STACK_FORMAT_VERSION,
        subject_id: stack.subject_id.clone(),
        scan_id: stack.scan_id.clone(),
        shape: [d, h, w],
        spacing: stack.spacing,
        channel_names: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?)
        .map_err(|e| Error::io(&meta_path, e))?;

    for (name, vol) in CHANNEL_NAMES.iter().zip(&stack.channels) {
        let path = dir.join(format!("{name}.raw"));
        let mut bytes = Vec::with_capacity(vol.data.len() * 4);
        for &v in &vol.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let mask_path = dir.join("mask.raw");
    fs::write(&mask_path, &stack.mask.data).map_err(|e| Error::io(&mask_path, e))?;
    Ok(())
}

/// Read a stack directory written by [`write_stack`].
pub fn read_stack(directory: impl AsRef<Path>) -> Result<ScanStack> {
    let dir = directory.as_ref();
    let meta_path = dir.join("meta.json");
    let meta_bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: StackMeta = serde_json::from_slice(&meta_bytes).map_err(|e| {
        Error::CorruptHeader { path: meta_path.clone(), detail: e.to_string() }
    })?;
    if meta.format_version != STACK_FORMAT_VERSION {
        return Err(Error::UnknownVersion(meta.format_version));
    }
    if meta.channel_names != CHANNEL_NAMES {
        return Err(Error::CorruptHeader {
            path: meta_path.clone(),
            detail: format!("unexpected channel set {:?}", meta.channel_names),
        });
    }
    let [d, h, w] = meta.shape;
    if d == 0 || h == 0 || w == 0 {
        return Err(Error::CorruptHeader {
            path: meta_path,
            detail: format!("degenerate shape {:?}", meta.shape),
        });
    }
    let voxels = d * h * w;

    let mut channels = Vec::with_capacity(5);
    for name in CHANNEL_NAMES {
        let path = dir.join(format!("{name}.raw"));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != voxels * 4 {
            return Err(Error::shape(format!(
                "{}: payload {} bytes, header declares {}",
                path.display(),
                bytes.len(),
                voxels * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        channels.push(Volume { depth: d, height: h, width: w, data });
    }
    let mask_path = dir.join("mask.raw");
    let mask_bytes = fs::read(&mask_path).map_err(|e| Error::io(&mask_path, e))?;
    if mask_bytes.len() != voxels {
        return Err(Error::shape(format!(
            "{}: payload {} bytes, header declares {voxels}",
            mask_path.display(),
            mask_bytes.len()
        )));
    }
    let stack = ScanStack {
        subject_id: meta.subject_id,
        scan_id: meta.scan_id,
        channels: channels.try_into().expect("five channels"),
        mask: Mask3 { depth: d, height: h, width: w, data: mask_bytes },
        spacing: meta.spacing,
    };
    stack.validate()?;
    Ok(stack)
}

/// A `manifest.csv` row; `path` is relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub scan_id: String,
    pub path: String,
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path).map_err(Error::Csv)?;
    for e in entries {
        wtr.serialize(e)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::Reader::from_path(path.as_ref()).map_err(Error::Csv)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Load every stack listed in a manifest, resolving relative paths.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<ScanStack>> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let entries = read_manifest(manifest_path)?;
    let mut out = Vec::with_capacity(entries.len());
    for e in &entries {
        let p = PathBuf::from(&e.path);
        let dir = if p.is_absolute() { p } else { base.join(p) };
        out.push(read_stack(dir)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    pub(crate) fn random_stack(seed: u64, d: usize, h: usize, w: usize) -> ScanStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vol = |rng: &mut ChaCha8Rng| Volume {
            depth: d,
            height: h,
            width: w,
            data: (0..d * h * w).map(|_| rng.random_range(-100.0..100.0)).collect(),
        };
        let channels = [
            vol(&mut rng),
            vol(&mut rng),
            vol(&mut rng),
            vol(&mut rng),
            vol(&mut rng),
        ];
        let mask = Mask3 {
            depth: d,
            height: h,
            width: w,
            data: (0..d * h * w).map(|_| u8::from(rng.random_bool(0.1))).collect(),
        };
        ScanStack {
            subject_id: format!("sub{seed:03}"),
            scan_id: "scan00".into(),
            channels,
            mask,
            spacing: [1.0, 1.0, 5.0],
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        // Depth extremes included: 2 and 22.
        for (i, d) in [2usize, 5, 22].into_iter().enumerate() {
            let stack = random_stack(i as u64, d, 12, 10);
            let p = dir.path().join(format!("s{i}"));
            write_stack(&stack, &p).unwrap();
            let back = read_stack(&p).unwrap();
            assert_eq!(stack, back);
        }
    }

    #[test]
    fn short_payload_is_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let stack = random_stack(9, 3, 8, 8);
        let p = dir.path().join("s");
        write_stack(&stack, &p).unwrap();
        let cbf = p.join("cbf.raw");
        let bytes = std::fs::read(&cbf).unwrap();
        std::fs::write(&cbf, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_stack(&p), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn non_binary_mask_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut stack = random_stack(11, 2, 6, 6);
        stack.mask.data[5] = 2;
        assert!(matches!(
            write_stack(&stack, dir.path().join("bad")),
            Err(Error::NonBinaryLabel(_))
        ));
    }

    #[test]
    fn garbled_header_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let stack = random_stack(13, 2, 6, 6);
        let p = dir.path().join("s");
        write_stack(&stack, &p).unwrap();
        std::fs::write(p.join("meta.json"), b"{not json").unwrap();
        assert!(matches!(read_stack(&p), Err(Error::CorruptHeader { .. })));
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stack = random_stack(15, 2, 6, 6);
        let p = dir.path().join("s");
        write_stack(&stack, &p).unwrap();
        let meta = std::fs::read_to_string(p.join("meta.json")).unwrap();
        std::fs::write(p.join("meta.json"), meta.replace("\"format_version\": 1", "\"format_version\": 9"))
            .unwrap();
        assert!(matches!(read_stack(&p), Err(Error::UnknownVersion(9))));
    }

    #[test]
    fn manifest_round_trip_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let a = random_stack(1, 2, 6, 6);
        let b = random_stack(2, 3, 6, 6);
        write_stack(&a, dir.path().join("a")).unwrap();
        write_stack(&b, dir.path().join("b")).unwrap();
        let entries = vec![
            ManifestEntry {
                subject_id: a.subject_id.clone(),
                scan_id: a.scan_id.clone(),
                path: "a".into(),
            },
            ManifestEntry {
                subject_id: b.subject_id.clone(),
                scan_id: b.scan_id.clone(),
                path: "b".into(),
            },
        ];
        let mpath = dir.path().join("manifest.csv");
        write_manifest(&entries, &mpath).unwrap();
        assert_eq!(read_manifest(&mpath).unwrap(), entries);
        let loaded = load_dataset(&mpath).unwrap();
        assert_eq!(loaded, vec![a, b]);
        let header = std::fs::read_to_string(&mpath).unwrap();
        assert!(header.starts_with("subject_id,scan_id,path"));
    }

    #[test]
    fn random_round_trips_hold() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..100 {
            let d = if i == 0 { 2 } else if i == 1 { 22 } else { rng.random_range(1..9) };
            let stack = random_stack(1000 + i, d, 6, 7);
            let p = dir.path().join(format!("r{i}"));
            write_stack(&stack, &p).unwrap();
            assert_eq!(read_stack(&p).unwrap(), stack);
        }
    }
}
