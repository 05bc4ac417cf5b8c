//! Boundary extraction and surface distances.
//!
//! A surface voxel is foreground with at least one background face
//! neighbor; the image border counts as background. Depth-1 masks use
//! in-plane 4-connectivity, volumes use 6-connectivity.

use crate::data::Mask3;
use crate::error::{Error, Result};
use crate::parallel::map_slice;

/// Boundary voxel coordinates `(z, y, x)` plus the voxel spacing
/// `[sx, sy, sz]` in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSet {
    pub points: Vec<[usize; 3]>,
    pub spacing: [f64; 3],
}

impl SurfaceSet {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

pub fn extract_surface(mask: &Mask3, spacing: [f64; 3]) -> SurfaceSet {
    let (d, h, w) = (mask.depth, mask.height, mask.width);
    let at = |z: isize, y: isize, x: isize| -> u8 {
        if z < 0 || y < 0 || x < 0 || z >= d as isize || y >= h as isize || x >= w as isize {
            0
        } else {
            mask.data[(z as usize * h + y as usize) * w + x as usize]
        }
    };
    let mut points = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if mask.data[(z * h + y) * w + x] == 0 {
                    continue;
                }
                let (zi, yi, xi) = (z as isize, y as isize, x as isize);
                let mut exposed = at(zi, yi - 1, xi) == 0
                    || at(zi, yi + 1, xi) == 0
                    || at(zi, yi, xi - 1) == 0
                    || at(zi, yi, xi + 1) == 0;
                if d > 1 {
                    exposed = exposed || at(zi - 1, yi, xi) == 0 || at(zi + 1, yi, xi) == 0;
                }
                if exposed {
                    points.push([z, y, x]);
                }
            }
        }
    }
    SurfaceSet { points, spacing }
}

#[inline]
fn dist_mm(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    let dz = (a[0] as f64 - b[0] as f64) * spacing[2];
    let dy = (a[1] as f64 - b[1] as f64) * spacing[1];
    let dx = (a[2] as f64 - b[2] as f64) * spacing[0];
    (dz * dz + dy * dy + dx * dx).sqrt()
}

/// Min distance from each point of `from` to the set `to`, in `from`'s
/// point order.
fn min_distances(from: &SurfaceSet, to: &SurfaceSet) -> Vec<f64> {
    map_slice(&from.points, |&p| {
        let mut best = f64::INFINITY;
        for &q in &to.points {
            let d = dist_mm(p, q, from.spacing);
            if d < best {
                best = d;
            }
        }
        best
    })
}

fn check_nonempty(a: &SurfaceSet, b: &SurfaceSet) -> Result<()> {
    if a.is_empty() {
        return Err(Error::EmptySurface("first"));
    }
    if b.is_empty() {
        return Err(Error::EmptySurface("second"));
    }
    Ok(())
}

/// Hausdorff distance: max of the two directed max-min distances (mm).
pub fn hausdorff(a: &SurfaceSet, b: &SurfaceSet) -> Result<f64> {
    check_nonempty(a, b)?;
    let ab = min_distances(a, b).into_iter().fold(0.0f64, f64::max);
    let ba = min_distances(b, a).into_iter().fold(0.0f64, f64::max);
    Ok(ab.max(ba))
}

/// Average symmetric surface distance: mean of the two directed average
/// surface distances (mm).
pub fn assd(a: &SurfaceSet, b: &SurfaceSet) -> Result<f64> {
    check_nonempty(a, b)?;
    let asd = |from: &SurfaceSet, to: &SurfaceSet| -> f64 {
        let ds = min_distances(from, to);
        ds.iter().sum::<f64>() / ds.len() as f64
    };
    Ok((asd(a, b) + asd(b, a)) / 2.0)
}
