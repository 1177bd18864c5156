//! RBF kernels, the five-kernel mixture with median-heuristic bandwidth,
//! and maximum mean discrepancy between samples.
//!
//! The MMD estimator is the biased V-statistic
//! `mean(K(a,a)) + mean(K(b,b)) - 2 mean(K(a,b))`, which is nonnegative and
//! exactly zero when the two samples coincide. [`mmd2_var`] assembles the
//! same quantity on a gradient tape so generator training can differentiate
//! through the generated sample.

use crate::diff::{Tape, Var};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("need at least {0} points, got {1}")]
    TooFewPoints(usize, usize),
}

/// Base bandwidth plus the five component bandwidths
/// `sigma_n = 2^(n-3) * sigma`, n = 1..5.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    sigma: f64,
    components: [f64; 5],
}

impl KernelSpec {
    pub fn new(sigma: f64) -> Result<Self, KernelError> {
        if !(sigma > 0.0) {
            return Err(KernelError::NonPositiveBandwidth(format!("{sigma}")));
        }
        let mut components = [0.0; 5];
        for (n, c) in components.iter_mut().enumerate() {
            *c = 2f64.powi(n as i32 - 2) * sigma;
        }
        Ok(KernelSpec { sigma, components })
    }

    /// Bandwidth from the median heuristic over `sample` rows.
    pub fn from_sample(sample: &Array2<f64>) -> Result<Self, KernelError> {
        Self::new(median_bandwidth(sample)?)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn components(&self) -> &[f64; 5] {
        &self.components
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Single RBF evaluation exp(-|x - x'|^2 / (2 sigma)).
pub fn rbf(x: &[f64], y: &[f64], sigma: f64) -> Result<f64, KernelError> {
    if !(sigma > 0.0) {
        return Err(KernelError::NonPositiveBandwidth(format!("{sigma}")));
    }
    if x.len() != y.len() {
        return Err(KernelError::DimMismatch(x.len(), y.len()));
    }
    Ok((-sq_dist(x, y) / (2.0 * sigma)).exp())
}

/// Sum of the five RBF components; in (0, 5].
pub fn mixture_k(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64, KernelError> {
    if x.len() != y.len() {
        return Err(KernelError::DimMismatch(x.len(), y.len()));
    }
    let d = sq_dist(x, y);
    Ok(spec.components.iter().map(|s| (-d / (2.0 * s)).exp()).sum())
}

/// Median of squared pairwise Euclidean distances over all unordered
/// distinct row pairs. Falls back to the mean squared distance when the
/// median is zero, and to 1 when that is zero too.
pub fn median_bandwidth(sample: &Array2<f64>) -> Result<f64, KernelError> {
    let n = sample.nrows();
    if n < 2 {
        return Err(KernelError::TooFewPoints(2, n));
    }
    let rows: Vec<_> = sample.rows().into_iter().collect();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = rows[i]
                .iter()
                .zip(rows[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(d);
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median > 0.0 {
        return Ok(median);
    }
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    Ok(if mean > 0.0 { mean } else { 1.0 })
}

fn mixture_block(a: &Array2<f64>, b: &Array2<f64>, spec: &KernelSpec) -> Array2<f64> {
    let gram = a.dot(&b.t());
    let a_sq: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&r)).collect();
    let b_sq: Vec<f64> = b.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut out = gram;
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d = (a_sq[i] + b_sq[j] - 2.0 * *v).max(0.0);
            *v = spec.components.iter().map(|s| (-d / (2.0 * s)).exp()).sum();
        }
    }
    out
}

/// Biased MMD^2 estimate between the rows of `a` and `b`.
pub fn mmd2(a: &Array2<f64>, b: &Array2<f64>, spec: &KernelSpec) -> Result<f64, KernelError> {
    if a.ncols() != b.ncols() {
        return Err(KernelError::DimMismatch(a.ncols(), b.ncols()));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(KernelError::TooFewPoints(1, 0));
    }
    let kaa = mixture_block(a, a, spec).mean().unwrap();
    let kbb = mixture_block(b, b, spec).mean().unwrap();
    let kab = mixture_block(a, b, spec).mean().unwrap();
    Ok(kaa + kbb - 2.0 * kab)
}

/// Tape assembly of the biased MMD^2 between two sample nodes.
pub fn mmd2_var(tape: &mut Tape, a: Var, b: Var, spec: &KernelSpec) -> Var {
    let sigmas = spec.components.as_slice();
    let daa = tape.pairwise_sq_dist(a, a);
    let kaa = tape.rbf_mixture(daa, sigmas);
    let maa = tape.mean(kaa);
    let dbb = tape.pairwise_sq_dist(b, b);
    let kbb = tape.rbf_mixture(dbb, sigmas);
    let mbb = tape.mean(kbb);
    let dab = tape.pairwise_sq_dist(a, b);
    let kab = tape.rbf_mixture(dab, sigmas);
    let mab = tape.mean(kab);
    let sum = tape.add(maa, mbb);
    let cross = tape.scale(mab, 2.0);
    tape.sub(sum, cross)
}

/// Observed MMD^2 of `a` vs `b` together with the null distribution obtained
/// by re-splitting the pooled rows at random `n_perms` times. The pooled
/// kernel matrix is computed once and re-indexed per permutation.
pub fn mmd2_permutation_null<R: Rng>(
    a: &Array2<f64>,
    b: &Array2<f64>,
    spec: &KernelSpec,
    n_perms: usize,
    rng: &mut R,
) -> Result<(f64, Vec<f64>), KernelError> {
    if a.ncols() != b.ncols() {
        return Err(KernelError::DimMismatch(a.ncols(), b.ncols()));
    }
    let n = a.nrows();
    let m = b.nrows();
    let pooled = ndarray::concatenate![ndarray::Axis(0), a.view(), b.view()];
    let k = mixture_block(&pooled, &pooled, spec);
    let stat = |idx: &[usize]| -> f64 {
        let (ia, ib) = idx.split_at(n);
        let mut saa = 0.0;
        for &i in ia {
            for &j in ia {
                saa += k[[i, j]];
            }
        }
        let mut sbb = 0.0;
        for &i in ib {
            for &j in ib {
                sbb += k[[i, j]];
            }
        }
        let mut sab = 0.0;
        for &i in ia {
            for &j in ib {
                sab += k[[i, j]];
            }
        }
        saa / (n * n) as f64 + sbb / (m * m) as f64 - 2.0 * sab / (n * m) as f64
    };
    let mut idx: Vec<usize> = (0..n + m).collect();
    let observed = stat(&idx);
    let mut null = Vec::with_capacity(n_perms);
    for _ in 0..n_perms {
        idx.shuffle(rng);
        null.push(stat(&idx));
    }
    Ok((observed, null))
}

/// Empirical quantile by linear interpolation on the sorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}
