//! Differentiable Sinkhorn normalization.
//!
//! `to_positive` maps raw scores to a strictly positive matrix; repeated
//! row/column normalization pushes it toward the doubly-stochastic polytope;
//! the backward functions propagate gradients through the unrolled iterations
//! analytically, so no autodiff framework is needed.
//!
//! All row/column sums accumulate sequentially left-to-right; outputs are
//! bit-reproducible for identical inputs.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::metrics::{normalization_error, DoublyStochasticMatrix};

/// Parameters of the score-to-DSM mapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Unroll count `n`. `0` means pass-through (the recursion base case);
    /// training defaults to 5.
    pub iterations: usize,
    /// Regularizer added to every entry after exponentiation; guarantees full
    /// support, which the normalization needs to converge.
    pub epsilon: f64,
    /// Scores are clipped to `[-clamp, clamp]` before exponentiation.
    pub clamp: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            iterations: 5,
            epsilon: 1e-3,
            clamp: 50.0,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if !(self.clamp > 0.0 && self.clamp.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "clamp must be positive and finite, got {}",
                self.clamp
            )));
        }
        Ok(())
    }
}

/// Intermediates of one normalization iteration, kept for the backward pass.
#[derive(Debug, Clone)]
struct TapeStep {
    pre_row: Mat,
    post_row: Mat,
    post_col: Mat,
}

/// Per-iteration intermediates recorded by [`sinkhorn_forward`].
///
/// Single-use: feed it to [`sinkhorn_backward`] together with the upstream
/// gradient of the matching forward call.
#[derive(Debug, Clone)]
pub struct TapeCache {
    steps: Vec<TapeStep>,
}

impl TapeCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The matrix after each full row+column iteration, in forward order.
    pub fn iterates(&self) -> impl Iterator<Item = &Mat> {
        self.steps.iter().map(|s| &s.post_col)
    }
}

/// `exp(clip(scores, ±clamp)) + epsilon`: strictly positive, overflow-free.
pub fn to_positive(scores: &Mat, cfg: &SinkhornConfig) -> Result<Mat> {
    cfg.validate()?;
    if !scores.is_square() {
        return Err(Error::NonSquare {
            rows: scores.rows(),
            cols: scores.cols(),
        });
    }
    Ok(scores.map(|s| s.clamp(-cfg.clamp, cfg.clamp).exp() + cfg.epsilon))
}

/// Gradient of [`to_positive`] with respect to the raw scores.
///
/// `d out/d s = exp(s)` inside the clip window and `0` outside (the boundary
/// itself counts as saturated). The exponential is recomputed from `scores`
/// rather than taken as `out − ε`, which would cancel catastrophically for
/// strongly negative scores.
pub fn to_positive_backward(scores: &Mat, grad_out: &Mat, cfg: &SinkhornConfig) -> Result<Mat> {
    cfg.validate()?;
    if !scores.same_shape(grad_out) {
        return Err(Error::shape(
            "to_positive_backward",
            scores.rows() * scores.cols(),
            grad_out.rows() * grad_out.cols(),
        ));
    }
    let mut out = grad_out.clone();
    for (g, s) in out.as_mut_slice().iter_mut().zip(scores.as_slice()) {
        *g = if s.abs() < cfg.clamp { *g * s.exp() } else { 0.0 };
    }
    Ok(out)
}

/// Divides every row by its sum.
pub fn row_normalize(q: &Mat) -> Result<Mat> {
    let mut out = q.clone();
    for i in 0..q.rows() {
        let s = q.row_sum(i);
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::DegenerateInput(format!(
                "row {i} sums to {s}; cannot normalize"
            )));
        }
        for v in out.row_mut(i) {
            *v /= s;
        }
    }
    Ok(out)
}

/// Divides every column by its sum.
pub fn col_normalize(q: &Mat) -> Result<Mat> {
    let mut out = q.clone();
    for j in 0..q.cols() {
        let s = q.col_sum(j);
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::DegenerateInput(format!(
                "column {j} sums to {s}; cannot normalize"
            )));
        }
        for i in 0..q.rows() {
            out[(i, j)] /= s;
        }
    }
    Ok(out)
}

/// Gradient of [`row_normalize`] with respect to its input.
///
/// With `S_p = Σ_k q_in[p][k]`:
/// `grad_in[p][q] = grad_out[p][q]/S_p − (Σ_j grad_out[p][j]·q_in[p][j])/S_p²`.
pub fn row_normalize_backward(grad_out: &Mat, q_in: &Mat) -> Result<Mat> {
    if !grad_out.same_shape(q_in) {
        return Err(Error::shape(
            "row_normalize_backward",
            q_in.rows() * q_in.cols(),
            grad_out.rows() * grad_out.cols(),
        ));
    }
    let mut out = Mat::zeros(q_in.rows(), q_in.cols());
    for p in 0..q_in.rows() {
        let s = q_in.row_sum(p);
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::DegenerateInput(format!(
                "row {p} sums to {s}; cannot normalize"
            )));
        }
        let mut dot = 0.0;
        for (g, q) in grad_out.row(p).iter().zip(q_in.row(p)) {
            dot += g * q;
        }
        let correction = dot / (s * s);
        for (o, g) in out.row_mut(p).iter_mut().zip(grad_out.row(p)) {
            *o = g / s - correction;
        }
    }
    Ok(out)
}

/// Gradient of [`col_normalize`]: the row formula under transposition.
pub fn col_normalize_backward(grad_out: &Mat, q_in: &Mat) -> Result<Mat> {
    Ok(row_normalize_backward(&grad_out.transpose(), &q_in.transpose())?.transpose())
}

/// Runs `cfg.iterations` row-then-column normalizations of `q0`.
///
/// Returns the (approximately) doubly-stochastic result plus the tape of
/// intermediates needed by [`sinkhorn_backward`].
pub fn sinkhorn_forward(q0: &Mat, cfg: &SinkhornConfig) -> Result<(DoublyStochasticMatrix, TapeCache)> {
    cfg.validate()?;
    if !q0.is_square() {
        return Err(Error::NonSquare {
            rows: q0.rows(),
            cols: q0.cols(),
        });
    }
    if let Some(&bad) = q0.as_slice().iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::DegenerateInput(format!(
            "entry {bad} is not strictly positive"
        )));
    }
    let mut cur = q0.clone();
    let mut steps = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let pre_row = cur;
        let post_row = row_normalize(&pre_row)?;
        let post_col = col_normalize(&post_row)?;
        cur = post_col.clone();
        steps.push(TapeStep {
            pre_row,
            post_row,
            post_col,
        });
    }
    Ok((DoublyStochasticMatrix::from_matrix(cur)?, TapeCache { steps }))
}

/// Propagates `grad_out` back through the iterations recorded in `tape`,
/// returning the gradient with respect to the forward call's `q0`.
pub fn sinkhorn_backward(grad_out: &Mat, tape: &TapeCache) -> Result<Mat> {
    let mut g = grad_out.clone();
    for step in tape.steps.iter().rev() {
        if !g.same_shape(&step.post_col) {
            return Err(Error::shape(
                "sinkhorn_backward",
                step.post_col.rows() * step.post_col.cols(),
                g.rows() * g.cols(),
            ));
        }
        g = col_normalize_backward(&g, &step.post_row)?;
        g = row_normalize_backward(&g, &step.pre_row)?;
    }
    Ok(g)
}

/// Inference-only normalization: iterates until `normalization_error ≤ tol`.
///
/// Returns the matrix and the number of iterations used. Exceeding
/// `max_iterations` is a divergence error.
pub fn sinkhorn_converge(q0: &Mat, tol: f64, max_iterations: usize) -> Result<(Mat, usize)> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive and finite, got {tol}"
        )));
    }
    if !q0.is_square() {
        return Err(Error::NonSquare {
            rows: q0.rows(),
            cols: q0.cols(),
        });
    }
    if let Some(&bad) = q0.as_slice().iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::DegenerateInput(format!(
            "entry {bad} is not strictly positive"
        )));
    }
    let mut cur = q0.clone();
    for k in 0..=max_iterations {
        if normalization_error(&cur)? <= tol {
            return Ok((cur, k));
        }
        if k == max_iterations {
            break;
        }
        cur = col_normalize(&row_normalize(&cur)?)?;
    }
    Err(Error::Diverged {
        iteration: max_iterations,
        what: format!("normalization error still above {tol}"),
    })
}
