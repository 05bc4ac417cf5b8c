//! Finite-difference verification of tape gradients.

use crate::error::{Error, Result};

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Denominator floor below which the comparison switches to absolute error.
const ABS_FLOOR: f64 = 1e-8;

/// Compare tape gradients of a scalar program against central finite
/// differences, returning the maximum relative error over all parameter
/// elements (absolute error where the denominator is below `1e-8`).
///
/// `program` rebuilds the computation on a fresh tape from leaf ids in the
/// same order as `params`; it must return a scalar node. Runs in `f64`.
pub fn grad_check<F>(program: F, params: &[Tensor<f64>], probe_eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    if !(1e-7..=1e-3).contains(&probe_eps) {
        return Err(Error::DomainError {
            op: "grad_check",
            detail: format!("probe_eps {probe_eps} outside [1e-7, 1e-3]"),
        });
    }
    for (i, p) in params.iter().enumerate() {
        if !p.all_finite() {
            return Err(Error::NonFiniteGradient { context: format!("parameter {i}") });
        }
    }

    // Analytic gradients from one recorded forward pass.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.set_requires_grad(true);
            tape.leaf(&p)
        })
        .collect();
    let loss = program(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> =
        ids.iter().map(|&id| tape.grad_tensor(&grads, id)).collect();
    for (i, g) in analytic.iter().enumerate() {
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient {
                context: format!("analytic gradient of parameter {i}"),
            });
        }
    }

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = perturbed.iter().map(|p| tape.leaf(p)).collect();
        let loss = program(&mut tape, &ids)?;
        Ok(tape.value(loss)[0])
    };

    let mut max_err = 0.0f64;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + probe_eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - probe_eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * probe_eps);
            if !numeric.is_finite() {
                return Err(Error::NonFiniteGradient {
                    context: format!("finite difference of parameter {pi}[{ei}]"),
                });
            }
            let a = analytic[pi].data()[ei];
            let denom = a.abs().max(numeric.abs());
            let err = if denom < ABS_FLOOR {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / denom
            };
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}
