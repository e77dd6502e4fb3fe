//! Score binarization: maps a real-valued score matrix to a binary learned
//! adjacency.
//!
//! The primary method projects each score row onto the probability simplex
//! (sparsemax). The projection zeroes out weak entries by construction, so
//! the edge rule is simply "kept positive mass", with no tunable threshold;
//! it is also invariant to row-wise shifts and scales of the score
//! distribution. Threshold, top-K, and quantile selection are provided as
//! the conventional baselines.

use crate::error::{Error, Result};
use crate::graph::{LearnedAdjacency, ScoreMatrix};
use crate::mat::{BinMat, Mat};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Edge selection rule applied to a score matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BinarizationMethod {
    /// Row-wise Euclidean projection onto the simplex; edges where the
    /// projected mass stays positive.
    Sparsemax,
    /// Edge wherever the score strictly exceeds a fixed threshold.
    StaticThreshold(f64),
    /// The K largest off-diagonal scores of each row become edges.
    TopK(usize),
    /// Edge wherever the score strictly exceeds the given quantile of all
    /// off-diagonal scores.
    Quantile(f64),
}

impl BinarizationMethod {
    pub fn validate(&self, n_entities: usize) -> Result<()> {
        match *self {
            BinarizationMethod::Sparsemax => Ok(()),
            BinarizationMethod::StaticThreshold(t) => {
                if t.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("threshold must be finite".into()))
                }
            }
            BinarizationMethod::TopK(k) => {
                if k == 0 {
                    Err(Error::InvalidArgument("top-K requires K >= 1".into()))
                } else if k >= n_entities {
                    Err(Error::InvalidArgument(format!(
                        "top-K K={k} must be smaller than the row length {n_entities}"
                    )))
                } else {
                    Ok(())
                }
            }
            BinarizationMethod::Quantile(q) => {
                if q > 0.0 && q < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "quantile must lie in (0, 1), got {q}"
                    )))
                }
            }
        }
    }
}

impl fmt::Display for BinarizationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinarizationMethod::Sparsemax => write!(f, "sparsemax"),
            BinarizationMethod::StaticThreshold(t) => write!(f, "threshold:{t}"),
            BinarizationMethod::TopK(k) => write!(f, "topk:{k}"),
            BinarizationMethod::Quantile(q) => write!(f, "quantile:{q}"),
        }
    }
}

impl FromStr for BinarizationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "sparsemax" {
            return Ok(BinarizationMethod::Sparsemax);
        }
        if let Some(rest) = s.strip_prefix("threshold:") {
            let t: f64 = rest
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad threshold value {rest:?}")))?;
            return Ok(BinarizationMethod::StaticThreshold(t));
        }
        if let Some(rest) = s.strip_prefix("topk:") {
            let k: usize = rest
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad top-K value {rest:?}")))?;
            return Ok(BinarizationMethod::TopK(k));
        }
        if let Some(rest) = s.strip_prefix("quantile:") {
            let q: f64 = rest
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad quantile value {rest:?}")))?;
            return Ok(BinarizationMethod::Quantile(q));
        }
        Err(Error::InvalidArgument(format!(
            "unknown binarizer {s:?}; expected sparsemax | threshold:<t> | topk:<k> | quantile:<q>"
        )))
    }
}

/// Euclidean projection of `z` onto the probability simplex
/// `{p : p >= 0, sum p = 1}` via the sort-and-threshold procedure:
/// sort descending, keep the largest prefix with `1 + k*z_(k) > sum_(j<=k)`,
/// subtract the prefix shift, clamp the rest to exactly zero.
pub fn sparsemax_row(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::InvalidArgument(
            "sparsemax of an empty vector".into(),
        ));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "sparsemax requires finite entries".into(),
        ));
    }
    let mut sorted: Vec<f64> = z.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));

    let mut support = 0usize;
    let mut support_sum = 0.0;
    let mut cumsum = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        if 1.0 + (k + 1) as f64 * v > cumsum {
            support = k + 1;
            support_sum = cumsum;
        }
    }
    let tau = (support_sum - 1.0) / support as f64;
    Ok(z.iter().map(|&v| (v - tau).max(0.0)).collect())
}

/// Options for [`binarize_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BinarizeOptions {
    /// Exclude each row's diagonal entry from the sparsemax projection.
    ///
    /// Off by default: the self-similarity diagonal is the row maximum and
    /// soaks up simplex mass, which sharpens the competition early in
    /// training - weak candidates collapse to zero sooner, so the support
    /// settles on the true neighborhood noticeably earlier. Masking is kept
    /// as a comparison mode.
    pub mask_diagonal: bool,
}

/// Row-stochastic matrix produced by projecting each score row onto the
/// simplex. Every row is nonnegative and sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseProbMatrix {
    values: Mat,
}

impl SparseProbMatrix {
    pub fn values(&self) -> &Mat {
        &self.values
    }
}

/// Projects every row of the score matrix onto the simplex. By default the
/// whole row is projected, diagonal included (the edge rule later discards
/// the diagonal cell); with `mask_diagonal` the projection runs over the
/// off-diagonal entries only and the diagonal cell is fixed at zero.
pub fn sparse_prob_matrix(s: &ScoreMatrix, opts: BinarizeOptions) -> Result<SparseProbMatrix> {
    let n = s.dims().n_entities();
    let mut p = Mat::zeros(n, n);
    for i in 0..n {
        if opts.mask_diagonal {
            let off: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| s.values().get(i, j))
                .collect();
            let proj = sparsemax_row(&off)?;
            let mut idx = 0;
            for j in 0..n {
                if j != i {
                    p.set(i, j, proj[idx]);
                    idx += 1;
                }
            }
        } else {
            let proj = sparsemax_row(s.values().row(i))?;
            for (j, v) in proj.iter().enumerate() {
                p.set(i, j, *v);
            }
        }
    }
    Ok(SparseProbMatrix { values: p })
}

/// OR-symmetrization: an undirected edge survives if either direction was
/// selected. Row-wise rules can keep (i, j) in row i while dropping (j, i)
/// in row j; downstream identification assumes an undirected graph.
pub fn symmetrize(a: &LearnedAdjacency) -> LearnedAdjacency {
    let n = a.n();
    let mut m = BinMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && (a.has_edge(i, j) || a.has_edge(j, i)) {
                m.set(i, j, true);
            }
        }
    }
    LearnedAdjacency::new(m).expect("diagonal untouched")
}

/// Applies the selection rule, then OR-symmetrizes. The diagonal is never
/// an edge. Ties at a selection boundary drop the edge (strict inequality).
pub fn binarize(s: &ScoreMatrix, method: BinarizationMethod) -> Result<LearnedAdjacency> {
    binarize_with(s, method, BinarizeOptions::default())
}

pub fn binarize_with(
    s: &ScoreMatrix,
    method: BinarizationMethod,
    opts: BinarizeOptions,
) -> Result<LearnedAdjacency> {
    let n = s.dims().n_entities();
    method.validate(n)?;
    let mut m = BinMat::zeros(n, n);
    match method {
        BinarizationMethod::Sparsemax => {
            let p = sparse_prob_matrix(s, opts)?;
            for i in 0..n {
                for j in 0..n {
                    if i != j && p.values().get(i, j) > 0.0 {
                        m.set(i, j, true);
                    }
                }
            }
        }
        BinarizationMethod::StaticThreshold(tau) => {
            for i in 0..n {
                for j in 0..n {
                    if i != j && s.values().get(i, j) > tau {
                        m.set(i, j, true);
                    }
                }
            }
        }
        BinarizationMethod::TopK(k) => {
            for i in 0..n {
                let mut off: Vec<(usize, f64)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, s.values().get(i, j)))
                    .collect();
                // Descending by score, ascending index on exact ties.
                off.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
                for &(j, _) in off.iter().take(k) {
                    m.set(i, j, true);
                }
            }
        }
        BinarizationMethod::Quantile(q) => {
            let mut vals: Vec<f64> = Vec::with_capacity(n * (n - 1));
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        vals.push(s.values().get(i, j));
                    }
                }
            }
            vals.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let cut = quantile_linear(&vals, q);
            for i in 0..n {
                for j in 0..n {
                    if i != j && s.values().get(i, j) > cut {
                        m.set(i, j, true);
                    }
                }
            }
        }
    }
    Ok(symmetrize(
        &LearnedAdjacency::new(m).expect("diagonal untouched"),
    ))
}

/// Linear-interpolation quantile of an ascending-sorted slice.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}
