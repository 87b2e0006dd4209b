//! Central finite differences for gradient verification.
//!
//! These helpers only ever evaluate a caller-supplied loss closure, so they
//! stay independent of whatever analytic path they are used to check.

use crate::linalg::Matrix;

/// Finite-difference gradient of `loss` w.r.t. every entry of `at`,
/// using central differences with the given step.
pub fn finite_diff_gradient<F>(at: &Matrix, step: f64, mut loss: F) -> Matrix
where
    F: FnMut(&Matrix) -> f64,
{
    let mut probe = at.clone();
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    for i in 0..at.data().len() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + step;
        let plus = loss(&probe);
        probe.data_mut()[i] = original - step;
        let minus = loss(&probe);
        probe.data_mut()[i] = original;
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Like [`finite_diff_gradient`] but only for the listed flat entry indices;
/// untouched entries are left at zero in the result.
pub fn finite_diff_gradient_at<F>(at: &Matrix, step: f64, entries: &[usize], mut loss: F) -> Matrix
where
    F: FnMut(&Matrix) -> f64,
{
    let mut probe = at.clone();
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    for &i in entries {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + step;
        let plus = loss(&probe);
        probe.data_mut()[i] = original - step;
        let minus = loss(&probe);
        probe.data_mut()[i] = original;
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Maximum entrywise relative error between an analytic and a numeric
/// gradient. The denominator is floored so that entries below the
/// finite-difference noise floor compare absolutely rather than blowing up.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Same comparison restricted to the listed flat entries.
pub fn max_relative_error_at(
    analytic: &Matrix,
    numeric: &Matrix,
    entries: &[usize],
    floor: f64,
) -> f64 {
    entries
        .iter()
        .map(|&i| {
            let a = analytic.data()[i];
            let n = numeric.data()[i];
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

/// Default step and comparison floor used by the gradient gates.
pub const FD_STEP: f64 = 1e-6;
pub const FD_FLOOR: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-5;
