//! Multi-positive contrastive loss over cosine similarities of `z`.
//!
//! For anchor `i` with positive set `P_i` and denominator set `D_i`
//! (`j != i`, or all `j` when the self term is kept):
//!
//! ```text
//! L_i = log sum_{j in D_i} exp(c_ij / tau) - log sum_{j in P_i} exp(c_ij / tau)
//! L   = mean_i L_i
//! ```
//!
//! Rows of `z` are L2-normalized here, and the gradient flows back through
//! that normalization.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TgvError};
use crate::pairing::PairAssignment;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    /// Keep `j = i` in the denominator, as the literal batch-wide sum does.
    pub include_self_in_denominator: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { tau: 0.1, include_self_in_denominator: false }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub value: T,
    pub grad_z: Array2<T>,
}

fn row_norms<T: Scalar>(z: ArrayView2<T>) -> Result<Array1<T>> {
    let norms: Array1<T> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| !(n > T::zero())) {
        return Err(TgvError::ZeroNormRow(i));
    }
    Ok(norms)
}

/// Row-normalized copy of `z` and its row norms.
fn normalize<T: Scalar>(z: ArrayView2<T>) -> Result<(Array2<T>, Array1<T>)> {
    let norms = row_norms(z)?;
    let mut n = z.to_owned();
    for (mut row, &len) in n.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v / len);
    }
    Ok((n, norms))
}

/// Pairwise cosine similarity with an exact unit diagonal.
pub fn cosine_matrix<T: Scalar>(z: ArrayView2<T>) -> Result<Array2<T>> {
    let (n, _) = normalize(z)?;
    let mut c = n.dot(&n.t());
    c.diag_mut().fill(T::one());
    Ok(c)
}

/// `log sum exp` over `logits[j]` for `j` in `set`, shifted by the max.
fn log_sum_exp<T: Scalar>(logits: &[T], set: impl Iterator<Item = usize> + Clone) -> T {
    let max = set.clone().map(|j| logits[j]).fold(T::neg_infinity(), T::max);
    let sum: T = set.map(|j| (logits[j] - max).exp()).sum();
    max + sum.ln()
}

pub fn tgv_loss<T: Scalar>(z: ArrayView2<T>, pairs: &PairAssignment<T>, config: &LossConfig) -> Result<LossOutput<T>> {
    if !(config.tau > 0.0) {
        return Err(TgvError::InvalidConfig(format!("tau must be > 0, got {}", config.tau)));
    }
    let n = z.nrows();
    if n < 2 {
        return Err(TgvError::InsufficientData { needed: 2, got: n });
    }
    if pairs.len() != n {
        return Err(TgvError::ShapeMismatch(format!("{} anchors in pairs, {n} rows in z", pairs.len())));
    }
    for (i, set) in pairs.positives.iter().enumerate() {
        if set.is_empty() {
            return Err(TgvError::EmptyPositiveSet(i));
        }
        if let Some(&j) = set.iter().find(|&&j| j >= n) {
            return Err(TgvError::IndexOutOfRange { index: j, len: n });
        }
    }

    let (unit, norms) = normalize(z)?;
    let mut cos = unit.dot(&unit.t());
    cos.diag_mut().fill(T::one());
    let inv_tau = T::of(1.0 / config.tau);
    let keep_self = config.include_self_in_denominator;

    // weights[i][j] = dL_i/dlogit_ij = q_ij [j in D_i] - p_ij [j in P_i]
    let mut weights = Array2::<T>::zeros((n, n));
    let mut total = T::zero();
    let mut logits = vec![T::zero(); n];
    for i in 0..n {
        for (j, l) in logits.iter_mut().enumerate() {
            *l = cos[[i, j]] * inv_tau;
        }
        let denom = (0..n).filter(move |&j| keep_self || j != i);
        let positives = pairs.positives[i].iter().copied();
        let lse_d = log_sum_exp(&logits, denom.clone());
        let lse_p = log_sum_exp(&logits, positives.clone());
        total += lse_d - lse_p;
        for j in denom {
            weights[[i, j]] += (logits[j] - lse_d).exp();
        }
        for j in positives {
            weights[[i, j]] -= (logits[j] - lse_p).exp();
        }
    }
    let n_t = T::of(n as f64);
    let value = total / n_t;

    // dL/dc = W / (N tau); c_ij = u_i . u_j is symmetric in (i, j).
    let scale = inv_tau / n_t;
    let sym = (&weights + &weights.t()).mapv(|w| w * scale);
    let grad_unit = sym.dot(&unit);
    // Project out the radial component and undo the normalization.
    let mut grad_z = grad_unit;
    for ((mut g, u), &len) in grad_z.rows_mut().into_iter().zip(unit.rows()).zip(norms.iter()) {
        let radial = g.dot(&u);
        g.zip_mut_with(&u, |gv, &uv| *gv = (*gv - radial * uv) / len);
    }
    if !value.is_finite() || grad_z.iter().any(|v| !v.is_finite()) {
        return Err(TgvError::NonFiniteValue("contrastive loss".into()));
    }
    Ok(LossOutput { value, grad_z })
}

/// Per-anchor terms, for diagnostics.
pub fn per_anchor_terms<T: Scalar>(z: ArrayView2<T>, pairs: &PairAssignment<T>, config: &LossConfig) -> Result<Vec<T>> {
    let cos = cosine_matrix(z)?;
    let n = z.nrows();
    let inv_tau = T::of(1.0 / config.tau);
    Ok(cos
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            let logits: Vec<T> = row.iter().map(|&c| c * inv_tau).collect();
            let keep_self = config.include_self_in_denominator;
            let d = log_sum_exp(&logits, (0..n).filter(move |&j| keep_self || j != i));
            let p = log_sum_exp(&logits, pairs.positives[i].iter().copied());
            d - p
        })
        .collect())
}
