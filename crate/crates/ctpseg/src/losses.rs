//! Per-pixel segmentation losses over foreground probabilities: cross
//! entropy, its class-weighted variant, and the focal loss.
//!
//! All three reduce by the mean over pixels and clamp probabilities to
//! `[eps, 1-eps]` before any logarithm. Labels must be strictly binary.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, NodeId, Tape};
use crate::error::{Error, Result};

/// Default probability clamp.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

/// Which loss to train with, plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// `ce`, `wce`, or `focal`.
    pub kind: LossKind,
    /// Focusing parameter, focal loss only.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Lesion-class weight, weighted cross entropy only. When absent it is
    /// estimated from the training split via [`estimate_w`].
    #[serde(default)]
    pub w: Option<f64>,
    /// Swap the roles of `w` and `1-w` (conventional imbalance correction).
    #[serde(default)]
    pub invert_weight: bool,
    #[serde(default = "default_clamp_eps")]
    pub clamp_eps: f64,
}

fn default_gamma() -> f64 {
    1.0
}

fn default_clamp_eps() -> f64 {
    DEFAULT_CLAMP_EPS
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Focal,
            gamma: 1.0,
            w: None,
            invert_weight: false,
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Wce,
    Focal,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(Error::NegativeGamma(self.gamma));
        }
        if let Some(w) = self.w {
            if !(0.0 < w && w < 1.0) {
                return Err(Error::WeightOutOfRange(w));
            }
        }
        if !(0.0 < self.clamp_eps && self.clamp_eps < 0.5) {
            return Err(Error::DomainError {
                op: "loss config",
                detail: format!("clamp_eps {} outside (0, 0.5)", self.clamp_eps),
            });
        }
        Ok(())
    }

    /// Apply the configured loss. `w` must have been resolved for `wce`.
    pub fn apply<E: Element>(&self, tape: &mut Tape<E>, p: NodeId, y: NodeId) -> Result<NodeId> {
        self.validate()?;
        match self.kind {
            LossKind::Ce => ce_loss(tape, p, y, self.clamp_eps),
            LossKind::Wce => {
                let w = self.w.ok_or(Error::WeightOutOfRange(f64::NAN))?;
                let w = if self.invert_weight { 1.0 - w } else { w };
                wce_loss(tape, p, y, w, self.clamp_eps)
            }
            LossKind::Focal => focal_loss(tape, p, y, self.gamma, self.clamp_eps),
        }
    }
}

fn check_pair<E: Element>(tape: &Tape<E>, p: NodeId, y: NodeId) -> Result<()> {
    if tape.shape(p) != tape.shape(y) {
        return Err(Error::shape(format!(
            "probabilities {:?} vs labels {:?}",
            tape.shape(p),
            tape.shape(y)
        )));
    }
    for &v in tape.value(y) {
        if v != E::zero() && v != E::one() {
            return Err(Error::NonBinaryLabel(v.as_f64()));
        }
    }
    Ok(())
}

/// The two per-pixel terms shared by every loss in the family:
/// `y*log(p)` and `(1-y)*log(1-p)`, with `p` clamped to `[eps, 1-eps]`.
fn log_terms<E: Element>(
    tape: &mut Tape<E>,
    p: NodeId,
    y: NodeId,
    clamp_eps: f64,
) -> Result<(NodeId, NodeId, NodeId, NodeId)> {
    let eps = E::from_f64(clamp_eps);
    let pc = tape.clamp(p, eps, E::one() - eps);
    let ones = tape.constant(tape.shape(p).to_vec(), vec![E::one(); tape.value(p).len()]);
    let one_minus_p = tape.sub(ones, pc)?;
    let one_minus_y = tape.sub(ones, y)?;
    let log_p = tape.log(pc)?;
    let log_1p = tape.log(one_minus_p)?;
    let pos = tape.mul(y, log_p)?;
    let neg = tape.mul(one_minus_y, log_1p)?;
    Ok((pos, neg, pc, one_minus_p))
}

/// Mean over pixels of `-y*log(p) - (1-y)*log(1-p)`.
pub fn ce_loss<E: Element>(
    tape: &mut Tape<E>,
    p: NodeId,
    y: NodeId,
    clamp_eps: f64,
) -> Result<NodeId> {
    check_pair(tape, p, y)?;
    let (pos, neg, _, _) = log_terms(tape, p, y, clamp_eps)?;
    let s = tape.add(pos, neg)?;
    let m = tape.mean(s);
    Ok(tape.neg(m))
}

/// Mean over pixels of `-w*y*log(p) - (1-w)*(1-y)*log(1-p)`, the class
/// weight applied exactly as written.
pub fn wce_loss<E: Element>(
    tape: &mut Tape<E>,
    p: NodeId,
    y: NodeId,
    w: f64,
    clamp_eps: f64,
) -> Result<NodeId> {
    if !(0.0 < w && w < 1.0) {
        return Err(Error::WeightOutOfRange(w));
    }
    check_pair(tape, p, y)?;
    let (pos, neg, _, _) = log_terms(tape, p, y, clamp_eps)?;
    let wpos = tape.mul_scalar(pos, E::from_f64(w));
    let wneg = tape.mul_scalar(neg, E::from_f64(1.0 - w));
    let s = tape.add(wpos, wneg)?;
    let m = tape.mean(s);
    Ok(tape.neg(m))
}

/// Mean over pixels of `-y*(1-p)^g*log(p) - (1-y)*p^g*log(1-p)`. At
/// `gamma = 0` this reproduces [`ce_loss`] bit for bit.
pub fn focal_loss<E: Element>(
    tape: &mut Tape<E>,
    p: NodeId,
    y: NodeId,
    gamma: f64,
    clamp_eps: f64,
) -> Result<NodeId> {
    if gamma < 0.0 {
        return Err(Error::NegativeGamma(gamma));
    }
    check_pair(tape, p, y)?;
    let g = E::from_f64(gamma);
    let (pos, neg, pc, one_minus_p) = log_terms(tape, p, y, clamp_eps)?;
    let down_pos = tape.pow_scalar(one_minus_p, g);
    let down_neg = tape.pow_scalar(pc, g);
    let pos = tape.mul(down_pos, pos)?;
    let neg = tape.mul(down_neg, neg)?;
    let s = tape.add(pos, neg)?;
    let m = tape.mean(s);
    Ok(tape.neg(m))
}

/// Empirical lesion measure: lesion pixels over total pixels, clamped to
/// `[1e-6, 1-1e-6]`.
pub fn estimate_w<'a, I>(masks: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut lesion = 0u64;
    let mut total = 0u64;
    for m in masks {
        lesion += m.iter().filter(|&&v| v != 0).count() as u64;
        total += m.len() as u64;
    }
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok((lesion as f64 / total as f64).clamp(1e-6, 1.0 - 1e-6))
}

/// Convenience wrapper: evaluate a loss on plain probability/label slices
/// without keeping the tape around.
pub fn eval_loss<E: Element>(
    cfg: &LossConfig,
    p: &[E],
    y: &[E],
) -> Result<f64> {
    let mut tape = Tape::new();
    let pt = crate::autodiff::Tensor::from_vec(vec![p.len()], p.to_vec())?;
    let yt = crate::autodiff::Tensor::from_vec(vec![y.len()], y.to_vec())?;
    let pid = tape.leaf(&pt);
    let yid = tape.leaf(&yt);
    let loss = cfg.apply(&mut tape, pid, yid)?;
    Ok(tape.value(loss)[0].as_f64())
}

#[cfg(test)]
mod tests {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use crate::autodiff::{grad_check, Tensor};

    use super::*;

    fn loss_value(
        f: impl Fn(&mut Tape<f64>, NodeId, NodeId) -> Result<NodeId>,
        p: &[f64],
        y: &[f64],
    ) -> f64 {
        let mut tape = Tape::new();
        let pt = Tensor::from_f64s([p.len()], p).unwrap();
        let yt = Tensor::from_f64s([y.len()], y).unwrap();
        let pid = tape.leaf(&pt);
        let yid = tape.leaf(&yt);
        let l = f(&mut tape, pid, yid).unwrap();
        tape.value(l)[0]
    }

    // The decimal literals below are the pinned expected values, not
    // attempts to write ln 2.
    #[allow(clippy::approx_constant)]
    #[test]
    fn ce_point_values() {
        let v = loss_value(|t, p, y| ce_loss(t, p, y, DEFAULT_CLAMP_EPS), &[0.5], &[1.0]);
        assert!((v - 0.6931472).abs() < 1e-6);

        let v2 = loss_value(
            |t, p, y| ce_loss(t, p, y, DEFAULT_CLAMP_EPS),
            &[0.5, 0.5],
            &[1.0, 0.0],
        );
        assert!((v2 - 0.6931472).abs() < 1e-6);
    }

    #[test]
    fn ce_perfect_prediction_is_clamped_small() {
        let v = loss_value(
            |t, p, y| ce_loss(t, p, y, DEFAULT_CLAMP_EPS),
            &[1.0, 0.0],
            &[1.0, 0.0],
        );
        let bound = -(1.0 - DEFAULT_CLAMP_EPS).ln();
        assert!(v >= 0.0 && v <= bound * 1.0000001, "v={v} bound={bound}");
    }

    #[test]
    fn wce_point_values() {
        let v = loss_value(|t, p, y| wce_loss(t, p, y, 0.01, DEFAULT_CLAMP_EPS), &[0.5], &[1.0]);
        assert!((v - 0.0069315).abs() < 1e-6);
        let v0 = loss_value(|t, p, y| wce_loss(t, p, y, 0.01, DEFAULT_CLAMP_EPS), &[0.5], &[0.0]);
        assert!((v0 - 0.6862157).abs() < 1e-6);
    }

    #[test]
    fn wce_half_weight_is_exactly_half_ce() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.random_range(1..40usize);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();
            let ce = loss_value(|t, p, y| ce_loss(t, p, y, DEFAULT_CLAMP_EPS), &p, &y);
            let wce = loss_value(|t, p, y| wce_loss(t, p, y, 0.5, DEFAULT_CLAMP_EPS), &p, &y);
            assert_eq!(wce, 0.5 * ce, "bitwise equality expected");
        }
    }

    #[test]
    fn focal_point_values() {
        let v1 = loss_value(|t, p, y| focal_loss(t, p, y, 1.0, DEFAULT_CLAMP_EPS), &[0.9], &[1.0]);
        assert!((v1 - 0.0105361).abs() < 1e-6, "gamma=1: {v1}");
        let v2 = loss_value(|t, p, y| focal_loss(t, p, y, 2.0, DEFAULT_CLAMP_EPS), &[0.9], &[1.0]);
        assert!((v2 - 0.0010536).abs() < 1e-6, "gamma=2: {v2}");
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(1..30usize);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..0.999)).collect();
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.3))).collect();
            let ce = loss_value(|t, p, y| ce_loss(t, p, y, DEFAULT_CLAMP_EPS), &p, &y);
            let fl = loss_value(|t, p, y| focal_loss(t, p, y, 0.0, DEFAULT_CLAMP_EPS), &p, &y);
            assert!((ce - fl).abs() <= 1e-12, "{ce} vs {fl}");
        }
    }

    #[test]
    fn focal_nonincreasing_in_gamma_on_correct_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(1..20usize);
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();
            // p on the correct side: p >= 0.5 where y = 1, p <= 0.5 where y = 0.
            let p: Vec<f64> = y
                .iter()
                .map(|&yi| {
                    let q = rng.random_range(0.5..0.999);
                    if yi > 0.5 {
                        q
                    } else {
                        1.0 - q
                    }
                })
                .collect();
            let g1 = rng.random_range(0.0..3.0);
            let g2 = g1 + rng.random_range(0.0..3.0);
            let f1 = loss_value(|t, p, y| focal_loss(t, p, y, g1, DEFAULT_CLAMP_EPS), &p, &y);
            let f2 = loss_value(|t, p, y| focal_loss(t, p, y, g2, DEFAULT_CLAMP_EPS), &p, &y);
            assert!(f2 <= f1 + 1e-12, "FL({g2})={f2} > FL({g1})={f1}");
        }
    }

    #[test]
    fn losses_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(1..20usize);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();
            for v in [
                loss_value(|t, p, y| ce_loss(t, p, y, DEFAULT_CLAMP_EPS), &p, &y),
                loss_value(|t, p, y| wce_loss(t, p, y, 0.2, DEFAULT_CLAMP_EPS), &p, &y),
                loss_value(|t, p, y| focal_loss(t, p, y, 1.0, DEFAULT_CLAMP_EPS), &p, &y),
            ] {
                assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..20 {
            let n = rng.random_range(2..16usize);
            let p = Tensor::from_vec(
                vec![n],
                (0..n).map(|_| rng.random_range(0.05..0.95)).collect(),
            )
            .unwrap();
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4))).collect();
            let yt = Tensor::from_f64s([n], &y).unwrap();
            type LossFn = Box<dyn Fn(&mut Tape<f64>, NodeId, NodeId) -> Result<NodeId>>;
            let cases: Vec<LossFn> = vec![
                Box::new(|t, p, y| ce_loss(t, p, y, DEFAULT_CLAMP_EPS)),
                Box::new(|t, p, y| wce_loss(t, p, y, 0.07, DEFAULT_CLAMP_EPS)),
                Box::new(|t, p, y| focal_loss(t, p, y, 1.0, DEFAULT_CLAMP_EPS)),
                Box::new(|t, p, y| focal_loss(t, p, y, 2.5, DEFAULT_CLAMP_EPS)),
            ];
            for (ci, f) in cases.iter().enumerate() {
                let yt = yt.clone();
                let err = grad_check(
                    |tape, ids| {
                        let yid = tape.leaf(&yt);
                        f(tape, ids[0], yid)
                    },
                    std::slice::from_ref(&p),
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-6, "trial {trial} case {ci}: err {err}");
            }
        }
    }

    #[test]
    fn focal_loss_over_two_layer_conv_net_passes_fd_check() {
        use crate::nn::{conv2d, ConvSpec};

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Tensor::from_vec(
            vec![1, 2, 6, 6],
            (0..72).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let w1 = Tensor::from_vec(
            vec![3, 2, 3, 3],
            (0..54).map(|_| rng.random_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let w2 = Tensor::from_vec(
            vec![1, 3, 3, 3],
            (0..27).map(|_| rng.random_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let y: Vec<f64> = (0..36).map(|_| f64::from(rng.random_bool(0.2))).collect();
        let labels = Tensor::from_f64s([1, 6, 6], &y).unwrap();

        let err = grad_check(
            |tape, ids| {
                let spec = ConvSpec::new(3, 3).padding(1, 1);
                let h = conv2d(tape, ids[0], ids[1], None, &spec)?;
                let h = tape.relu(h);
                let logits = conv2d(tape, h, ids[2], None, &spec)?;
                let p = tape.select_channel(logits, 0)?;
                let p = tape.sigmoid(p);
                let yid = tape.leaf(&labels);
                focal_loss(tape, p, yid, 1.0, DEFAULT_CLAMP_EPS)
            },
            &[x, w1, w2],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "composed focal/conv grad error {err}");
    }

    #[test]
    fn estimate_w_counts_and_clamps() {
        let mut m = vec![0u8; 100];
        m[17] = 1;
        assert_eq!(estimate_w([m.as_slice()]).unwrap(), 0.01);
        let zeros = vec![0u8; 50];
        assert_eq!(estimate_w([zeros.as_slice()]).unwrap(), 1e-6);
        let ones = vec![1u8; 50];
        assert_eq!(estimate_w([ones.as_slice()]).unwrap(), 1.0 - 1e-6);
        assert!(matches!(estimate_w(std::iter::empty::<&[u8]>()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn non_binary_labels_rejected() {
        let mut tape = Tape::<f64>::new();
        let p = Tensor::from_f64s([2], &[0.5, 0.5]).unwrap();
        let y = Tensor::from_f64s([2], &[1.0, 0.5]).unwrap();
        let pid = tape.leaf(&p);
        let yid = tape.leaf(&y);
        assert!(matches!(
            ce_loss(&mut tape, pid, yid, DEFAULT_CLAMP_EPS),
            Err(Error::NonBinaryLabel(_))
        ));
    }

    #[test]
    fn invert_weight_swaps_roles() {
        let p = [0.5f64];
        let y = [1.0f64];
        let cfg = LossConfig {
            kind: LossKind::Wce,
            w: Some(0.01),
            invert_weight: true,
            ..LossConfig::default()
        };
        let v = eval_loss(&cfg, &p, &y).unwrap();
        assert!((v - 0.99 * core::f64::consts::LN_2).abs() < 1e-7);
    }
}
