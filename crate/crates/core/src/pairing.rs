//! Positive-set assignment from a combined similarity matrix.
//!
//! Anchor `i` is paired with every `j != i` whose similarity is within `h`
//! of the best match `M_i = max_{j != i} S[i][j]`. With `h = 0` only the
//! (possibly tied) nearest neighbours survive.

use std::io::Write;

use crate::error::{Result, TgvError};
use crate::scalar::Scalar;
use crate::tabular::SimilarityMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PairAssignment<T> {
    /// Ascending indices of the positives of each anchor.
    pub positives: Vec<Vec<usize>>,
    /// Best off-diagonal similarity of each anchor. Empty for assignments
    /// that were not derived from a similarity matrix.
    pub maxima: Vec<T>,
    pub threshold: T,
}

impl<T: Scalar> PairAssignment<T> {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    /// Explicit positive sets, e.g. augmented twins.
    pub fn from_sets(positives: Vec<Vec<usize>>) -> Result<Self> {
        let n = positives.len();
        for (i, set) in positives.iter().enumerate() {
            if set.is_empty() {
                return Err(TgvError::EmptyPositiveSet(i));
            }
            if let Some(&j) = set.iter().find(|&&j| j >= n || j == i) {
                return Err(TgvError::IndexOutOfRange { index: j, len: n });
            }
        }
        Ok(PairAssignment { positives, maxima: Vec::new(), threshold: T::zero() })
    }

    /// Twin pairing for a batch laid out as `[view_a; view_b]`: row `i`
    /// pairs with `i + n` and vice versa.
    pub fn twins(n: usize) -> Self {
        let positives = (0..2 * n).map(|i| vec![(i + n) % (2 * n)]).collect();
        PairAssignment { positives, maxima: Vec::new(), threshold: T::zero() }
    }

    /// Permutes anchors: new row `k` is old row `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let positives = perm
            .iter()
            .map(|&old| {
                let mut set: Vec<usize> = self.positives[old].iter().map(|&j| inverse[j]).collect();
                set.sort_unstable();
                set
            })
            .collect();
        let maxima =
            if self.maxima.is_empty() { Vec::new() } else { perm.iter().map(|&old| self.maxima[old]).collect() };
        PairAssignment { positives, maxima, threshold: self.threshold }
    }

    /// Writes `(anchor, positive, similarity)` rows for inspection.
    pub fn write_csv<W: Write>(&self, s: &SimilarityMatrix<T>, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["anchor", "positive", "similarity"])?;
        for (i, set) in self.positives.iter().enumerate() {
            for &j in set {
                w.write_record([i.to_string(), j.to_string(), format!("{}", s.get(i, j))])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `max_{j != i} S[i][j]`.
pub fn anchor_max<T: Scalar>(s: &SimilarityMatrix<T>, i: usize) -> Result<T> {
    best_match(s, i).map(|(_, v)| v)
}

/// Single most similar partner of anchor `i`; lowest index among ties.
pub fn best_match<T: Scalar>(s: &SimilarityMatrix<T>, i: usize) -> Result<(usize, T)> {
    let n = s.len();
    if n < 2 {
        return Err(TgvError::InsufficientData { needed: 2, got: n });
    }
    if i >= n {
        return Err(TgvError::IndexOutOfRange { index: i, len: n });
    }
    let row = s.values.row(i);
    let mut best: Option<(usize, T)> = None;
    for (j, &v) in row.iter().enumerate() {
        if j == i {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((j, v)),
        }
    }
    Ok(best.expect("n >= 2 leaves a candidate"))
}

/// `P_i = { j != i : S[i][j] >= M_i - h }`.
pub fn assign_pairs<T: Scalar>(s: &SimilarityMatrix<T>, h: T) -> Result<PairAssignment<T>> {
    if h < T::zero() || h.is_nan() {
        return Err(TgvError::NegativeThreshold(h.f64()));
    }
    let n = s.len();
    let mut positives = Vec::with_capacity(n);
    let mut maxima = Vec::with_capacity(n);
    for i in 0..n {
        let m = anchor_max(s, i)?;
        let cut = m - h;
        let set: Vec<usize> =
            s.values.row(i).iter().enumerate().filter(|&(j, &v)| j != i && v >= cut).map(|(j, _)| j).collect();
        positives.push(set);
        maxima.push(m);
    }
    Ok(PairAssignment { positives, maxima, threshold: h })
}
