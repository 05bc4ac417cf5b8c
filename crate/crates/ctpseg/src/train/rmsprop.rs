//! RMSProp parameter updates keyed by parameter name.

use std::collections::HashMap;

use crate::autodiff::Element;
use crate::error::{Error, Result};

/// Defaults for the scalars the optimization routine needs beyond the
/// learning rate.
pub const RMSPROP_ALPHA: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;

/// Squared-gradient accumulator per parameter:
/// `acc ← α·acc + (1-α)·g²`, `param ← param − lr·g/(√acc + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp<E: Element> {
    lr: f64,
    alpha: f64,
    eps: f64,
    acc: HashMap<String, Vec<E>>,
}

impl<E: Element> RmsProp<E> {
    pub fn new(lr: f64) -> Self {
        RmsProp { lr, alpha: RMSPROP_ALPHA, eps: RMSPROP_EPS, acc: HashMap::new() }
    }

    pub fn with_scalars(lr: f64, alpha: f64, eps: f64) -> Self {
        RmsProp { lr, alpha, eps, acc: HashMap::new() }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Drop all accumulators (used at phase boundaries).
    pub fn reset(&mut self) {
        self.acc.clear();
    }

    /// One update for one named parameter.
    pub fn step(&mut self, name: &str, param: &mut [E], grad: &[E]) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::shape(format!(
                "{name}: parameter has {} elements, gradient {}",
                param.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { context: name.to_string() });
        }
        let acc = self
            .acc
            .entry(name.to_string())
            .or_insert_with(|| vec![E::zero(); param.len()]);
        let alpha = E::from_f64(self.alpha);
        let one_minus = E::one() - alpha;
        let lr = E::from_f64(self.lr);
        let eps = E::from_f64(self.eps);
        for ((p, &g), a) in param.iter_mut().zip(grad).zip(acc.iter_mut()) {
            *a = alpha * *a + one_minus * g * g;
            *p = *p - lr * g / (a.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        // alpha=0.9, g=1, lr=0.1, eps≈0 → acc=0.1, |update| = 0.1/√0.1.
        let mut opt = RmsProp::<f64>::with_scalars(0.1, 0.9, 1e-15);
        let mut p = vec![1.0];
        opt.step("w", &mut p, &[1.0]).unwrap();
        let expected_update = 0.1 / 0.1f64.sqrt();
        assert!((1.0 - p[0] - expected_update).abs() < 1e-9, "update {}", 1.0 - p[0]);
        assert!((expected_update - 0.3162278).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_decays_accumulator_only() {
        let mut opt = RmsProp::<f64>::with_scalars(0.1, 0.9, 1e-8);
        let mut p = vec![2.0];
        opt.step("w", &mut p, &[1.0]).unwrap();
        let after_first = p[0];
        opt.step("w", &mut p, &[0.0]).unwrap();
        assert_eq!(p[0], after_first, "zero gradient must not move the parameter");
        // The accumulator decayed: a following unit gradient produces a
        // larger step than it would with an undamped accumulator.
        let acc = opt.acc.get("w").unwrap()[0];
        assert!((acc - 0.9 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn two_constant_steps_match_hand_recursion() {
        let (lr, alpha, eps, g) = (0.05, 0.9, 1e-8, 0.7);
        let mut opt = RmsProp::<f64>::with_scalars(lr, alpha, eps);
        let mut p = vec![0.3];
        let mut acc = 0.0;
        let mut want = 0.3;
        for _ in 0..2 {
            acc = alpha * acc + (1.0 - alpha) * g * g;
            want -= lr * g / (acc.sqrt() + eps);
        }
        opt.step("w", &mut p, &[g]).unwrap();
        opt.step("w", &mut p, &[g]).unwrap();
        assert!((p[0] - want).abs() < 1e-15);
    }

    #[test]
    fn mismatched_and_non_finite_rejected() {
        let mut opt = RmsProp::<f64>::new(0.1);
        let mut p = vec![0.0; 2];
        assert!(matches!(
            opt.step("w", &mut p, &[1.0]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            opt.step("w", &mut p, &[f64::NAN, 0.0]),
            Err(Error::NonFiniteGradient { .. })
        ));
    }
}
