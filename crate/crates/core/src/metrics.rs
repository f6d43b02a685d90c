//! Ranking and normalization metrics for permutation predictions.
//!
//! All pair/entry counting is exact integer arithmetic; only the final
//! division produces a float.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::perm::Permutation;

/// An `l x l` non-negative matrix whose row and column sums are within `tol`
/// of one. `tol` is data: the worst deviation actually observed.
#[derive(Debug, Clone)]
pub struct DoublyStochasticMatrix {
    mat: Mat,
    tol: f64,
}

impl DoublyStochasticMatrix {
    /// Wraps a matrix, recording its worst marginal deviation as `tol`.
    /// Rejects non-square or negative input.
    pub fn from_matrix(mat: Mat) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::NonSquare {
                rows: mat.rows(),
                cols: mat.cols(),
            });
        }
        if let Some(&bad) = mat.as_slice().iter().find(|x| !(**x >= 0.0)) {
            return Err(Error::Domain(format!("negative or NaN entry {bad}")));
        }
        let l = mat.rows();
        let mut tol = 0.0f64;
        for i in 0..l {
            tol = tol.max((mat.row_sum(i) - 1.0).abs());
            tol = tol.max((mat.col_sum(i) - 1.0).abs());
        }
        Ok(DoublyStochasticMatrix { mat, tol })
    }

    /// Like [`from_matrix`], but fails if the worst deviation exceeds `tol`.
    ///
    /// [`from_matrix`]: DoublyStochasticMatrix::from_matrix
    pub fn with_tolerance(mat: Mat, tol: f64) -> Result<Self> {
        let dsm = Self::from_matrix(mat)?;
        if dsm.tol > tol {
            return Err(Error::Domain(format!(
                "marginal deviation {} exceeds tolerance {}",
                dsm.tol, tol
            )));
        }
        Ok(DoublyStochasticMatrix { tol, ..dsm })
    }

    pub fn len(&self) -> usize {
        self.mat.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.mat.rows() == 0
    }

    pub fn matrix(&self) -> &Mat {
        &self.mat
    }

    pub fn into_matrix(self) -> Mat {
        self.mat
    }

    /// Declared bound on `max |row/col sum - 1|`.
    pub fn tol(&self) -> f64 {
        self.tol
    }
}

fn check_equal_lengths(context: &'static str, pred: &Permutation, truth: &Permutation) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape(context, truth.len(), pred.len()));
    }
    Ok(())
}

/// Kendall rank correlation between two permutations, in `[-1, 1]`.
///
/// A position pair `{i, j}` is concordant when `pred` and `truth` order it the
/// same way; `KT = (c+ - c-) / (l(l-1)/2)`. Ties cannot occur because
/// permutation entries are distinct.
pub fn kendall_tau(pred: &Permutation, truth: &Permutation) -> Result<f64> {
    check_equal_lengths("kendall_tau", pred, truth)?;
    let l = pred.len();
    if l < 2 {
        return Err(Error::InvalidLength { len: l, min: 2 });
    }
    let p = pred.as_slice();
    let t = truth.as_slice();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..l {
        for j in i + 1..l {
            let same = (p[i] < p[j]) == (t[i] < t[j]);
            if same {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = 0.5 * (l as f64) * ((l - 1) as f64);
    Ok((concordant - discordant) as f64 / pairs)
}

/// Fraction of equal entries between the two `l x l` matrix views.
///
/// Rows with matching targets agree in all `l` entries; otherwise they agree
/// everywhere except the two unit positions, so the count stays exact without
/// materializing the matrices.
pub fn hamming_similarity(pred: &Permutation, truth: &Permutation) -> Result<f64> {
    check_equal_lengths("hamming_similarity", pred, truth)?;
    let l = pred.len();
    if l == 0 {
        return Err(Error::InvalidLength { len: 0, min: 1 });
    }
    let mut equal_entries = 0u64;
    for (pi, ti) in pred.as_slice().iter().zip(truth.as_slice()) {
        equal_entries += if pi == ti { l as u64 } else { (l - 2) as u64 };
    }
    Ok(equal_entries as f64 / (l * l) as f64)
}

/// Mean over all `2l` row and column sums of `|sum - 1|`.
pub fn normalization_error(q: &Mat) -> Result<f64> {
    if !q.is_square() {
        return Err(Error::NonSquare {
            rows: q.rows(),
            cols: q.cols(),
        });
    }
    if let Some(&bad) = q.as_slice().iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::Domain(format!("negative or NaN entry {bad}")));
    }
    let l = q.rows();
    if l == 0 {
        return Err(Error::InvalidLength { len: 0, min: 1 });
    }
    let mut acc = 0.0;
    for i in 0..l {
        acc += (q.row_sum(i) - 1.0).abs();
    }
    for j in 0..l {
        acc += (q.col_sum(j) - 1.0).abs();
    }
    Ok(acc / (2 * l) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perm::{for_each_permutation, sample_permutation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn perm(pi: &[usize]) -> Permutation {
        Permutation::from_vec(pi.to_vec()).unwrap()
    }

    /// Reversal composition used by the antisymmetry property:
    /// complements every target index.
    fn rev(p: &Permutation) -> Permutation {
        let l = p.len();
        perm(&p.as_slice().iter().map(|&x| l - 1 - x).collect::<Vec<_>>())
    }

    #[test]
    fn kendall_tau_of_equal_perms_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for l in 2..=7 {
            let p = sample_permutation(l, &mut rng).unwrap();
            assert_eq!(kendall_tau(&p, &p).unwrap(), 1.0);
        }
    }

    #[test]
    fn kendall_tau_of_reversal_is_minus_one() {
        let t = perm(&[2, 0, 3, 1]);
        assert_eq!(kendall_tau(&rev(&t), &t).unwrap(), -1.0);
    }

    #[test]
    fn kendall_tau_counts_pairs() {
        // recovered ordering (1,0,2,3): one discordant pair out of six
        let kt = kendall_tau(&perm(&[1, 0, 2, 3]), &Permutation::identity(4)).unwrap();
        assert_eq!(kt, 4.0 / 6.0);
    }

    #[test]
    fn kendall_tau_rejects_length_mismatch() {
        let err = kendall_tau(&perm(&[0, 1]), &perm(&[0, 1, 2]));
        assert!(err.is_err());
    }

    #[test]
    fn kendall_tau_bounds_and_antisymmetry_exhaustive() {
        for l in 2..=5 {
            for_each_permutation(l, |t_pi| {
                let t = perm(t_pi);
                for_each_permutation(l, |p_pi| {
                    let p = perm(p_pi);
                    let kt = kendall_tau(&p, &t).unwrap();
                    assert!((-1.0..=1.0).contains(&kt));
                    assert_eq!(kt == 1.0, p == t, "KT=1 iff equal: {:?} vs {:?}", p, t);
                    let kt_rev = kendall_tau(&rev(&p), &t).unwrap();
                    assert_eq!(kt_rev, -kt);
                    true
                });
                true
            });
        }
    }

    #[test]
    fn kendall_tau_of_random_prediction_centers_on_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let truth = sample_permutation(6, &mut rng).unwrap();
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let p = sample_permutation(6, &mut rng).unwrap();
            acc += kendall_tau(&p, &truth).unwrap();
        }
        let mean = acc / draws as f64;
        assert!(mean.abs() < 0.02, "mean KT of random predictions = {mean}");
    }

    #[test]
    fn hamming_similarity_examples() {
        let id4 = Permutation::identity(4);
        assert_eq!(hamming_similarity(&id4, &id4).unwrap(), 1.0);

        let id2 = Permutation::identity(2);
        let swap2 = perm(&[1, 0]);
        assert_eq!(hamming_similarity(&id2, &swap2).unwrap(), 0.0);

        let transposed = perm(&[1, 0, 2, 3]);
        assert_eq!(hamming_similarity(&id4, &transposed).unwrap(), 12.0 / 16.0);
    }

    #[test]
    fn hamming_similarity_counts_matrix_view_entries() {
        // cross-check the closed-form count against literal matrix comparison
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let a = sample_permutation(6, &mut rng).unwrap();
            let b = sample_permutation(6, &mut rng).unwrap();
            let ma = a.matrix();
            let mb = b.matrix();
            let mut equal = 0usize;
            for i in 0..6 {
                for j in 0..6 {
                    if ma[(i, j)] == mb[(i, j)] {
                        equal += 1;
                    }
                }
            }
            assert_eq!(hamming_similarity(&a, &b).unwrap(), equal as f64 / 36.0);
        }
    }

    #[test]
    fn hamming_similarity_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a = sample_permutation(5, &mut rng).unwrap();
            let b = sample_permutation(5, &mut rng).unwrap();
            assert_eq!(
                hamming_similarity(&a, &b).unwrap(),
                hamming_similarity(&b, &a).unwrap()
            );
        }
    }

    #[test]
    fn normalization_error_examples() {
        let exact = perm(&[1, 2, 0]).matrix();
        assert_eq!(normalization_error(&exact).unwrap(), 0.0);

        let ones = Mat::from_vec(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(normalization_error(&ones).unwrap(), 1.0);

        let q = Mat::from_vec(2, 2, vec![0.9, 0.2, 0.1, 0.8]).unwrap();
        let ne = normalization_error(&q).unwrap();
        assert!((ne - 0.05).abs() < 1e-12, "ne = {ne}");
    }

    #[test]
    fn normalization_error_rejects_negative_entries() {
        let q = Mat::from_vec(2, 2, vec![0.9, -0.1, 0.1, 0.8]).unwrap();
        assert!(matches!(normalization_error(&q), Err(Error::Domain(_))));
    }

    #[test]
    fn dsm_wrapper_records_actual_deviation() {
        let q = Mat::from_vec(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let dsm = DoublyStochasticMatrix::from_matrix(q).unwrap();
        assert_eq!(dsm.tol(), 0.0);

        let q = Mat::from_vec(2, 2, vec![0.6, 0.5, 0.5, 0.5]).unwrap();
        assert!(DoublyStochasticMatrix::with_tolerance(q, 1e-6).is_err());
    }
}
