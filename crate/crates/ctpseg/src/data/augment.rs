//! Training-time slice augmentation: rotation, translation, per-axis
//! flips, and scaling, applied in a uniformly random order. Image channels
//! warp bilinearly, labels by nearest neighbor; out-of-frame fills with 0.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::SliceSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub enabled: bool,
    /// Rotation sampled from `[-rotate_deg, rotate_deg]`.
    pub rotate_deg: f64,
    /// Per-axis translation sampled from `[-frac, frac]` of the image size.
    pub translate_frac: f64,
    /// Independent flip probability per in-plane axis.
    pub flip_prob: f64,
    /// Scale factor range.
    pub scale_range: (f64, f64),
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            enabled: true,
            rotate_deg: 10.0,
            translate_frac: 0.1,
            flip_prob: 0.5,
            scale_range: (0.9, 1.1),
        }
    }
}

/// One concrete draw of the four operations plus their application order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAugment {
    pub rotate_deg: f64,
    /// Translation in pixels, (x, y).
    pub translate: (f64, f64),
    pub flip_x: bool,
    pub flip_y: bool,
    pub scale: f64,
    /// Permutation over {rotate, translate, flip, scale}.
    pub order: [AugmentOp; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentOp {
    Rotate,
    Translate,
    Flip,
    Scale,
}

impl SampledAugment {
    pub fn identity() -> Self {
        SampledAugment {
            rotate_deg: 0.0,
            translate: (0.0, 0.0),
            flip_x: false,
            flip_y: false,
            scale: 1.0,
            order: [
                AugmentOp::Rotate,
                AugmentOp::Translate,
                AugmentOp::Flip,
                AugmentOp::Scale,
            ],
        }
    }
}

/// Draw operation parameters uniformly within the configured ranges and a
/// uniformly random operation order.
pub fn sample_augment(
    params: &AugmentParams,
    (h, w): (usize, usize),
    rng: &mut impl Rng,
) -> SampledAugment {
    let r = params.rotate_deg;
    let t = params.translate_frac;
    let (slo, shi) = params.scale_range;
    let rotate_deg = rng.random_range(-r..=r);
    let tx = rng.random_range(-t..=t) * w as f64;
    let ty = rng.random_range(-t..=t) * h as f64;
    let flip_x = rng.random_bool(params.flip_prob);
    let flip_y = rng.random_bool(params.flip_prob);
    let scale = rng.random_range(slo..=shi);
    let mut order = [
        AugmentOp::Rotate,
        AugmentOp::Translate,
        AugmentOp::Flip,
        AugmentOp::Scale,
    ];
    order.shuffle(rng);
    SampledAugment { rotate_deg, translate: (tx, ty), flip_x, flip_y, scale, order }
}

/// Row-major 2×2 linear part plus translation; maps input to output
/// pixel coordinates `(x, y)`.
#[derive(Debug, Clone, Copy)]
struct Affine {
    m: [[f64; 2]; 2],
    t: [f64; 2],
}

impl Affine {
    fn identity() -> Self {
        Affine { m: [[1.0, 0.0], [0.0, 1.0]], t: [0.0, 0.0] }
    }

    /// `self ∘ other`: apply `other` first.
    fn compose(self, other: Affine) -> Affine {
        let a = self.m;
        let b = other.m;
        Affine {
            m: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                ],
            ],
            t: [
                a[0][0] * other.t[0] + a[0][1] * other.t[1] + self.t[0],
                a[1][0] * other.t[0] + a[1][1] * other.t[1] + self.t[1],
            ],
        }
    }

    fn inverse(self) -> Affine {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        let m = [[d / det, -b / det], [-c / det, a / det]];
        Affine {
            m,
            t: [
                -(m[0][0] * self.t[0] + m[0][1] * self.t[1]),
                -(m[1][0] * self.t[0] + m[1][1] * self.t[1]),
            ],
        }
    }

    fn apply(self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.t[0],
            self.m[1][0] * x + self.m[1][1] * y + self.t[1],
        )
    }

    /// Wrap a linear map so it acts about the image center.
    fn centered(m: [[f64; 2]; 2], cx: f64, cy: f64) -> Affine {
        let lin = Affine { m, t: [0.0, 0.0] };
        let to_origin = Affine { m: [[1.0, 0.0], [0.0, 1.0]], t: [-cx, -cy] };
        let back = Affine { m: [[1.0, 0.0], [0.0, 1.0]], t: [cx, cy] };
        back.compose(lin.compose(to_origin))
    }
}

fn op_affine(op: AugmentOp, draw: &SampledAugment, cx: f64, cy: f64) -> Affine {
    match op {
        AugmentOp::Rotate => {
            let th = draw.rotate_deg.to_radians();
            Affine::centered([[th.cos(), -th.sin()], [th.sin(), th.cos()]], cx, cy)
        }
        AugmentOp::Translate => Affine {
            m: [[1.0, 0.0], [0.0, 1.0]],
            t: [draw.translate.0, draw.translate.1],
        },
        AugmentOp::Flip => {
            let fx = if draw.flip_x { -1.0 } else { 1.0 };
            let fy = if draw.flip_y { -1.0 } else { 1.0 };
            Affine::centered([[fx, 0.0], [0.0, fy]], cx, cy)
        }
        AugmentOp::Scale => {
            Affine::centered([[draw.scale, 0.0], [0.0, draw.scale]], cx, cy)
        }
    }
}

fn bilinear_at(img: &[f32], h: usize, w: usize, sx: f64, sy: f64) -> f32 {
    let x0 = sx.floor() as isize;
    let y0 = sy.floor() as isize;
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            img[y as usize * w + x as usize] as f64
        }
    };
    let v = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + at(x0 + 1, y0) * fx * (1.0 - fy)
        + at(x0, y0 + 1) * (1.0 - fx) * fy
        + at(x0 + 1, y0 + 1) * fx * fy;
    v as f32
}

fn nearest_at(img: &[u8], h: usize, w: usize, sx: f64, sy: f64) -> u8 {
    let x = sx.round() as isize;
    let y = sy.round() as isize;
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        0
    } else {
        img[y as usize * w + x as usize]
    }
}

/// Apply a concrete draw to a slice sample.
pub fn apply_augment(sample: &SliceSample, draw: &SampledAugment) -> SliceSample {
    let (h, w) = (sample.height, sample.width);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;

    let mut forward = Affine::identity();
    for &op in &draw.order {
        forward = op_affine(op, draw, cx, cy).compose(forward);
    }
    let inverse = forward.inverse();

    let mut out = SliceSample {
        input: vec![0.0; sample.input.len()],
        label: vec![0; sample.label.len()],
        height: h,
        width: w,
    };
    for c in 0..5 {
        let src = &sample.input[c * h * w..(c + 1) * h * w];
        let dst = &mut out.input[c * h * w..(c + 1) * h * w];
        for oy in 0..h {
            for ox in 0..w {
                let (sx, sy) = inverse.apply(ox as f64, oy as f64);
                dst[oy * w + ox] = bilinear_at(src, h, w, sx, sy);
            }
        }
    }
    for oy in 0..h {
        for ox in 0..w {
            let (sx, sy) = inverse.apply(ox as f64, oy as f64);
            out.label[oy * w + ox] = nearest_at(&sample.label, h, w, sx, sy);
        }
    }
    out
}

/// Sample a draw and apply it; the identity when augmentation is disabled.
pub fn augment(sample: &SliceSample, params: &AugmentParams, rng: &mut impl Rng) -> SliceSample {
    if !params.enabled {
        return sample.clone();
    }
    let draw = sample_augment(params, (sample.height, sample.width), rng);
    apply_augment(sample, &draw)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample_with_pixel(h: usize, w: usize, row: usize, col: usize) -> SliceSample {
        let mut s = SliceSample {
            input: vec![0.0; 5 * h * w],
            label: vec![0; h * w],
            height: h,
            width: w,
        };
        s.label[row * w + col] = 1;
        s.input[row * w + col] = 1.0;
        s
    }

    #[test]
    fn disabled_is_bit_identical() {
        let s = sample_with_pixel(8, 8, 3, 4);
        let params = AugmentParams { enabled: false, ..AugmentParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&s, &params, &mut rng);
        assert_eq!(out, s);
    }

    #[test]
    fn thousand_draws_stay_in_ranges() {
        let params = AugmentParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let d = sample_augment(&params, (64, 64), &mut rng);
            assert!(d.rotate_deg >= -10.0 && d.rotate_deg <= 10.0);
            assert!(d.translate.0.abs() <= 0.1 * 64.0 + 1e-12);
            assert!(d.translate.1.abs() <= 0.1 * 64.0 + 1e-12);
            assert!(d.scale >= 0.9 && d.scale <= 1.1);
            // The order is always a permutation of the four ops.
            let mut seen = [false; 4];
            for op in d.order {
                seen[op as usize] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn pure_translation_displaces_by_rounded_pixels() {
        // 10% of H = 2 rows exactly.
        let h = 20;
        let s = sample_with_pixel(h, h, 5, 9);
        let draw = SampledAugment {
            translate: (0.0, 0.1 * h as f64),
            ..SampledAugment::identity()
        };
        let out = apply_augment(&s, &draw);
        let displaced = (5 + (0.1 * h as f64).round() as usize) * h + 9;
        assert_eq!(out.label[displaced], 1);
        assert_eq!(out.label.iter().map(|&v| v as usize).sum::<usize>(), 1);
    }

    #[test]
    fn labels_stay_binary_and_shapes_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = AugmentParams::default();
        let mut s = sample_with_pixel(16, 12, 7, 5);
        for i in 0..s.label.len() {
            s.label[i] = u8::from(i % 7 == 0);
        }
        for _ in 0..200 {
            let out = augment(&s, &params, &mut rng);
            assert_eq!(out.height, 16);
            assert_eq!(out.width, 12);
            assert_eq!(out.input.len(), s.input.len());
            assert!(out.label.iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn flip_both_axes_mirrors_pixel() {
        let s = sample_with_pixel(9, 9, 1, 2);
        let draw = SampledAugment {
            flip_x: true,
            flip_y: true,
            ..SampledAugment::identity()
        };
        let out = apply_augment(&s, &draw);
        assert_eq!(out.label[(9 - 1 - 1) * 9 + (9 - 1 - 2)], 1);
    }
}
