//! Central-difference gradient checking.
//!
//! These utilities are the numerical oracle for every analytic backward pass
//! in this crate: perturb one coordinate at a time, evaluate a scalar loss,
//! and compare the quotient against the claimed gradient.

use crate::error::{Error, Result};

/// Step size used by the gradient checks throughout the crate.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central finite-difference gradient of `f` at `x`: `(f(x+h·e_i) − f(x−h·e_i)) / 2h`.
///
/// `f` must be a pure function of its argument; it is called `2·len` times.
pub fn central_diff_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "step size must be positive");
    let mut xs = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(&xs);
        xs[i] = orig - h;
        let fm = f(&xs);
        xs[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// `|a − b| / max(1, |a|, |b|)`.
///
/// The floor of 1 makes the measure absolute for small gradients, which keeps
/// finite-difference roundoff noise from flagging near-zero coordinates.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

/// Worst coordinate of an analytic-vs-numeric gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckSummary {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares two gradients coordinate-wise and reports the worst one.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> Result<CheckSummary> {
    if analytic.len() != numeric.len() {
        return Err(Error::shape(
            "compare_gradients",
            analytic.len(),
            numeric.len(),
        ));
    }
    if analytic.is_empty() {
        return Err(Error::InvalidLength { len: 0, min: 1 });
    }
    let mut summary = CheckSummary {
        max_rel_error: -1.0,
        worst_index: 0,
        analytic: analytic[0],
        numeric: numeric[0],
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(a, n);
        if e > summary.max_rel_error {
            summary = CheckSummary {
                max_rel_error: e,
                worst_index: i,
                analytic: a,
                numeric: n,
            };
        }
    }
    Ok(summary)
}
