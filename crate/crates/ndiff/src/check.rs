//! Finite-difference verification of analytic gradients.

use crate::array::Array;
use crate::NdiffError;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are compared absolutely instead of amplifying noise.
pub const REL_FLOOR: f64 = 1e-3;

/// Result of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FdCheck {
    /// Largest relative error over all coordinates of all parameters.
    pub max_rel_err: f64,
    /// Largest relative error per parameter, same order as the input slice.
    pub per_param: Vec<f64>,
    /// `(param, coordinate)` of the worst error, if any coordinate exists.
    pub worst: Option<(usize, usize)>,
}

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `(f(x + eps) - f(x - eps)) / (2 eps)`.
pub fn numeric_gradient<F>(f: F, params: &[Array], eps: f64) -> Result<Vec<Array>, NdiffError>
where
    F: Fn(&[Array]) -> Result<f64, NdiffError>,
{
    let mut work: Vec<Array> = params.to_vec();
    let mut grads: Vec<Array> = params.iter().map(|p| Array::zeros(p.shape())).collect();
    for pi in 0..params.len() {
        for j in 0..params[pi].len() {
            let original = work[pi].data()[j];
            work[pi].data_mut()[j] = original + eps;
            let up = f(&work)?;
            work[pi].data_mut()[j] = original - eps;
            let down = f(&work)?;
            work[pi].data_mut()[j] = original;
            grads[pi].data_mut()[j] = (up - down) / (2.0 * eps);
        }
    }
    Ok(grads)
}

/// Compare the analytic gradient of `f` against central finite differences.
///
/// `f` must return the loss and the analytic gradient of every parameter (in
/// order); it is called once unperturbed for the analytic side and twice per
/// coordinate for the numeric side. Relative error per coordinate is
/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn finite_diff_check<F>(f: F, params: &[Array], eps: f64) -> Result<FdCheck, NdiffError>
where
    F: Fn(&[Array]) -> Result<(f64, Vec<Array>), NdiffError>,
{
    let (_, analytic) = f(params)?;
    if analytic.len() != params.len() {
        return Err(NdiffError::BadShape {
            op: "finite_diff_check",
            expected: "one gradient per parameter",
            shape: vec![analytic.len(), params.len()],
        });
    }
    let numeric = numeric_gradient(|ps| f(ps).map(|(loss, _)| loss), params, eps)?;
    let mut report = FdCheck {
        max_rel_err: 0.0,
        per_param: vec![0.0; params.len()],
        worst: None,
    };
    for pi in 0..params.len() {
        if analytic[pi].shape() != params[pi].shape() {
            return Err(NdiffError::ShapeMismatch {
                op: "finite_diff_check",
                lhs: analytic[pi].shape().to_vec(),
                rhs: params[pi].shape().to_vec(),
            });
        }
        for j in 0..params[pi].len() {
            let a = analytic[pi].data()[j];
            let n = numeric[pi].data()[j];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
            if rel > report.per_param[pi] {
                report.per_param[pi] = rel;
            }
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((pi, j));
            }
        }
    }
    Ok(report)
}
