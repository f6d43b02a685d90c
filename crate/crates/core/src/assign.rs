//! Rounding a doubly-stochastic matrix to the nearest permutation matrix.
//!
//! `‖P − Q‖_F² = ‖Q‖_F² + l − 2·Σ_ij P_ij·Q_ij` for any permutation matrix P,
//! so the nearest P is a maximum-weight bipartite matching on Q. The solver is
//! the O(l³) potentials form of the Hungarian algorithm; a factorial
//! brute-force enumerator serves as its oracle for small l.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::metrics::DoublyStochasticMatrix;
use crate::perm::{for_each_permutation, Permutation};

/// Enumeration bound for [`brute_force_round`]: 9! ≈ 3.6·10⁵ candidates.
pub const BRUTE_FORCE_MAX: usize = 9;

/// A rounded prediction: the permutation and the Frobenius distance
/// `‖P − Q‖_F` it achieves.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub perm: Permutation,
    pub objective: f64,
}

/// `‖P(pi) − Q‖_F` via the trace identity; shared by both solvers so ties
/// compare bit-identically.
fn rounding_objective(q: &Mat, pi: &[usize]) -> f64 {
    let mut qss = 0.0;
    for v in q.as_slice() {
        qss += v * v;
    }
    let mut trace = 0.0;
    for (i, &target) in pi.iter().enumerate() {
        trace += q[(i, target)];
    }
    (qss + pi.len() as f64 - 2.0 * trace).max(0.0).sqrt()
}

fn check_roundable(q: &Mat) -> Result<()> {
    if q.rows() == 0 {
        return Err(Error::InvalidLength { len: 0, min: 1 });
    }
    if !q.is_finite() {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Maximum-weight assignment on `q` (1-indexed arrays with a sentinel
/// column 0; `p[j]` is the row matched to column `j`).
fn hungarian_max(q: &Mat) -> Vec<usize> {
    let n = q.rows();
    let cost = |i: usize, j: usize| -q[(i - 1, j - 1)];
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // walk the augmenting path back to the sentinel
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pi = vec![0usize; n];
    for j in 1..=n {
        pi[p[j] - 1] = j - 1;
    }
    pi
}

/// Nearest permutation matrix to `q` in Frobenius distance, via maximum-weight
/// matching. Deterministic; under exact ties the matching the potentials
/// method reaches first wins.
pub fn round_to_permutation(q: &DoublyStochasticMatrix) -> Result<AssignmentResult> {
    let m = q.matrix();
    check_roundable(m)?;
    let pi = hungarian_max(m);
    let objective = rounding_objective(m, &pi);
    let perm = Permutation::from_vec(pi)?;
    Ok(AssignmentResult { perm, objective })
}

/// Exhaustive argmin of `‖P − Q‖_F` over all `l!` permutations; ties go to
/// the lexicographically smallest `pi`. Refuses `l > `[`BRUTE_FORCE_MAX`].
pub fn brute_force_round(q: &DoublyStochasticMatrix) -> Result<AssignmentResult> {
    let m = q.matrix();
    check_roundable(m)?;
    let l = m.rows();
    if l > BRUTE_FORCE_MAX {
        return Err(Error::SizeLimit {
            got: l,
            limit: BRUTE_FORCE_MAX,
        });
    }
    let mut best_pi: Option<Vec<usize>> = None;
    let mut best_trace = f64::NEG_INFINITY;
    for_each_permutation(l, |pi| {
        let mut trace = 0.0;
        for (i, &target) in pi.iter().enumerate() {
            trace += m[(i, target)];
        }
        // strict improvement only: lexicographic enumeration order means the
        // first of any tied set is kept
        if trace > best_trace {
            best_trace = trace;
            best_pi = Some(pi.to_vec());
        }
        true
    });
    let pi = best_pi.expect("l >= 1 enumerates at least one permutation");
    let objective = rounding_objective(m, &pi);
    let perm = Permutation::from_vec(pi)?;
    Ok(AssignmentResult { perm, objective })
}
