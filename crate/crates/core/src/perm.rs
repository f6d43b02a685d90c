//! Permutation algebra: sampling, applying, and inverting sequence shuffles.
//!
//! Convention used throughout the crate: a permutation stores `pi`, where
//! `pi[i]` is the original index placed at shuffled position `i`. Shuffling is
//! `out[i] = seq[pi[i]]`, which in matrix form is `X~ = P * X` with
//! `P[i][pi[i]] = 1` (items stacked as rows). Recovery is the transpose:
//! `X = P^T * X~`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;

/// A bijection on `{0..l-1}` in "pull" form: `pi[i]` is the source index of
/// shuffled position `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    pi: Vec<usize>,
}

impl Permutation {
    /// Validates that `pi` is a bijection on `{0..l-1}`.
    pub fn from_vec(pi: Vec<usize>) -> Result<Self> {
        let l = pi.len();
        let mut seen = vec![false; l];
        for &p in &pi {
            if p >= l || seen[p] {
                return Err(Error::Domain(format!(
                    "not a bijection on 0..{}: {:?}",
                    l, pi
                )));
            }
            seen[p] = true;
        }
        Ok(Permutation { pi })
    }

    pub fn identity(l: usize) -> Self {
        Permutation {
            pi: (0..l).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.pi
    }

    pub fn is_identity(&self) -> bool {
        self.pi.iter().enumerate().all(|(i, &p)| i == p)
    }

    /// Inverse bijection: if `self` sends source `pi[i]` to position `i`,
    /// the inverse sends source `i` to position `pi[i]`.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.pi.len()];
        for (i, &p) in self.pi.iter().enumerate() {
            inv[p] = i;
        }
        Permutation { pi: inv }
    }

    /// Matrix view `P` with `P[i][pi[i]] = 1`, zeros elsewhere.
    pub fn matrix(&self) -> Mat {
        let l = self.pi.len();
        let mut m = Mat::zeros(l, l);
        for (i, &p) in self.pi.iter().enumerate() {
            m[(i, p)] = 1.0;
        }
        m
    }
}

/// Draws a permutation uniformly from all `l!` possibilities (Fisher-Yates).
pub fn sample_permutation<R: Rng + ?Sized>(l: usize, rng: &mut R) -> Result<Permutation> {
    if l < 2 {
        return Err(Error::InvalidLength { len: l, min: 2 });
    }
    let mut pi: Vec<usize> = (0..l).collect();
    for i in (1..l).rev() {
        let j = rng.random_range(0..=i);
        pi.swap(i, j);
    }
    Ok(Permutation { pi })
}

/// Shuffles `seq` so that `out[i] = seq[pi[i]]`.
pub fn apply<T: Clone>(perm: &Permutation, seq: &[T]) -> Result<Vec<T>> {
    if seq.len() != perm.len() {
        return Err(Error::shape("apply", perm.len(), seq.len()));
    }
    Ok(perm.pi.iter().map(|&p| seq[p].clone()).collect())
}

/// Inverts `apply`: places `shuffled[i]` back at original position `pi[i]`.
pub fn recover<T: Clone>(perm: &Permutation, shuffled: &[T]) -> Result<Vec<T>> {
    if shuffled.len() != perm.len() {
        return Err(Error::shape("recover", perm.len(), shuffled.len()));
    }
    let mut out: Vec<Option<T>> = vec![None; perm.len()];
    for (i, &p) in perm.pi.iter().enumerate() {
        out[p] = Some(shuffled[i].clone());
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// Calls `f` with every permutation of `{0..l-1}` in lexicographic order.
/// Stops early if `f` returns `false`.
pub fn for_each_permutation(l: usize, mut f: impl FnMut(&[usize]) -> bool) {
    let mut pi: Vec<usize> = (0..l).collect();
    loop {
        if !f(&pi) {
            return;
        }
        // next_permutation in lexicographic order
        let Some(i) = (0..l.saturating_sub(1)).rev().find(|&i| pi[i] < pi[i + 1]) else {
            return;
        };
        let j = (i + 1..l).rev().find(|&j| pi[j] > pi[i]).unwrap();
        pi.swap(i, j);
        pi[i + 1..].reverse();
    }
}

/// An ordered sequence of feature vectors together with the permutation that
/// produced its shuffled view and the (optional) latent ordering criterion.
#[derive(Debug, Clone)]
pub struct SequenceSample {
    items: Vec<Vec<f64>>,
    criterion: Option<Vec<f64>>,
    perm: Permutation,
}

impl SequenceSample {
    pub fn new(
        items: Vec<Vec<f64>>,
        criterion: Option<Vec<f64>>,
        perm: Permutation,
    ) -> Result<Self> {
        if items.len() != perm.len() {
            return Err(Error::shape("SequenceSample", perm.len(), items.len()));
        }
        if let Some(c) = &criterion {
            if c.len() != items.len() {
                return Err(Error::shape("SequenceSample criterion", items.len(), c.len()));
            }
            if c.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Domain(
                    "criterion values must be strictly increasing in the ordered view".into(),
                ));
            }
        }
        Ok(SequenceSample {
            items,
            criterion,
            perm,
        })
    }

    /// Items in their original (ordered) arrangement.
    pub fn items(&self) -> &[Vec<f64>] {
        &self.items
    }

    pub fn criterion(&self) -> Option<&[f64]> {
        self.criterion.as_deref()
    }

    pub fn perm(&self) -> &Permutation {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.items.first().map_or(0, Vec::len)
    }

    /// The shuffled view `x~[i] = x[pi[i]]` under the stored permutation.
    pub fn shuffled(&self) -> Vec<Vec<f64>> {
        apply(&self.perm, &self.items).expect("stored perm matches items by construction")
    }
}
