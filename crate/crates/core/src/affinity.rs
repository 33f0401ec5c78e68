//! Pairwise distances, Gaussian affinity and graph Laplacians.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_select::CoefficientMatrix;
use crate::matrix::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Correlation,
    Cosine,
    Euclidean,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Correlation => "correlation",
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "correlation" => Ok(Metric::Correlation),
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::Config(format!(
                "unknown metric {other:?} (expected correlation, cosine or euclidean)"
            ))),
        }
    }
}

/// Symmetric, non-negative, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    pub values: Matrix<T>,
    pub metric: Metric,
}

/// Symmetric with zero diagonal. `sigma` is the kernel bandwidth used.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix<T> {
    pub values: Matrix<T>,
    pub sigma: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Unnormalized,
    #[default]
    Symmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix<T> {
    pub values: Matrix<T>,
    pub normalization: Normalization,
}

impl<T: Real> DistanceMatrix<T> {
    pub fn n(&self) -> usize {
        self.values.rows()
    }
}

impl<T: Real> AffinityMatrix<T> {
    /// Wraps a matrix loaded from elsewhere after checking the invariants
    /// every consumer relies on.
    pub fn from_matrix(values: Matrix<T>, sigma: T) -> Result<Self> {
        validate_affinity(&values)?;
        Ok(Self { values, sigma })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            values: self.values.permute_symmetric(perm),
            sigma: self.sigma,
        }
    }
}

/// `1e-10` relative in `f64`, a few hundred ulps in `f32`.
pub(crate) fn symmetry_tolerance<T: Real>(m: &Matrix<T>) -> T {
    T::lit(1e-10).max(T::epsilon() * T::lit(256.0)) * m.max_abs().max(T::one())
}

fn validate_affinity<T: Real>(w: &Matrix<T>) -> Result<()> {
    if !w.is_square() {
        return Err(Error::InvalidAffinity(format!(
            "affinity must be square, got {}x{}",
            w.rows(),
            w.cols()
        )));
    }
    if w.as_slice().iter().any(|x| !x.is_finite() || *x < T::zero()) {
        return Err(Error::InvalidAffinity("entries must be finite and non-negative".into()));
    }
    if (0..w.rows()).any(|i| w[(i, i)] != T::zero()) {
        return Err(Error::InvalidAffinity("diagonal must be zero".into()));
    }
    let asym = w.asymmetry().unwrap_or_else(T::zero);
    if asym > symmetry_tolerance(w) {
        return Err(Error::InvalidAffinity(format!(
            "matrix is not symmetric (max |W(i,j) - W(j,i)| = {asym})"
        )));
    }
    Ok(())
}

/// Rows rescaled so that a plain dot product gives the similarity the
/// metric is built on.
fn prepared_rows<T: Real>(c: &CoefficientMatrix<T>, metric: Metric) -> Result<Matrix<T>> {
    let m = c.n_features();
    let mut out = c.values.clone();
    if metric == Metric::Euclidean {
        return Ok(out);
    }
    for (i, id) in c.image_ids.iter().enumerate() {
        let row = out.row_mut(i);
        if metric == Metric::Correlation {
            let mean = row.iter().copied().sum::<T>() / T::from_usize_lossy(m);
            row.iter_mut().for_each(|v| *v = *v - mean);
        }
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if !(norm > T::zero()) {
            return Err(Error::DegenerateFeature { image_id: id.clone() });
        }
        row.iter_mut().for_each(|v| *v = *v / norm);
    }
    Ok(out)
}

/// Full symmetric distance matrix between the rows of `c`.
///
/// Correlation distance is `1 - pearson(u, v)`, cosine distance
/// `1 - cos(u, v)`. Both are clamped to `[0, 2]` against rounding.
pub fn pairwise_distances<T: Real>(c: &CoefficientMatrix<T>, metric: Metric) -> Result<DistanceMatrix<T>> {
    let (n, m) = c.values.shape();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 images, got {n}")));
    }
    if m < 2 {
        return Err(Error::Input(format!("need at least 2 features, got {m}")));
    }
    let rows = prepared_rows(c, metric)?;
    let two = T::lit(2.0);
    let data: Vec<T> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let ri = rows.row(i);
            let rows = &rows;
            (0..n).map(move |j| {
                if i == j {
                    return T::zero();
                }
                let rj = rows.row(j);
                match metric {
                    Metric::Euclidean => ri.iter().zip(rj).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt(),
                    Metric::Correlation | Metric::Cosine => {
                        let dot: T = ri.iter().zip(rj).map(|(&a, &b)| a * b).sum();
                        (T::one() - dot).max(T::zero()).min(two)
                    }
                }
            })
        })
        .collect();
    let mut values = Matrix::from_vec(n, n, data)?;
    // Products commute exactly, so this only guards against a future
    // change in summation order.
    for i in 0..n {
        for j in (i + 1)..n {
            values[(j, i)] = values[(i, j)];
        }
    }
    Ok(DistanceMatrix { values, metric })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `exp(-d² / (2σ²))`.
    #[default]
    Gaussian,
    /// `exp(d²) / σ`, grows with distance. Kept only to reproduce the
    /// printed formula; not a valid affinity for clustering.
    Literal,
}

/// Population standard deviation of the strictly-upper-triangular entries.
pub fn off_diagonal_std<T: Real>(d: &Matrix<T>) -> T {
    let n = d.rows();
    let count = n * n.saturating_sub(1) / 2;
    if count == 0 {
        return T::zero();
    }
    let mut sum = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            sum = sum + d[(i, j)];
        }
    }
    let mean = sum / T::from_usize_lossy(count);
    let mut ss = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let t = d[(i, j)] - mean;
            ss = ss + t * t;
        }
    }
    (ss / T::from_usize_lossy(count)).sqrt()
}

/// Gaussian affinity with `σ` = standard deviation of the off-diagonal
/// distances; the diagonal is zero.
pub fn affinity_from_distances<T: Real>(d: &DistanceMatrix<T>) -> Result<AffinityMatrix<T>> {
    affinity_with_kernel(d, Kernel::Gaussian)
}

pub fn affinity_with_kernel<T: Real>(d: &DistanceMatrix<T>, kernel: Kernel) -> Result<AffinityMatrix<T>> {
    let n = d.n();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 images, got {n}")));
    }
    let sigma = off_diagonal_std(&d.values);
    if !(sigma > T::zero()) {
        return Err(Error::DegenerateGeometry(
            "all pairwise distances are equal; the kernel bandwidth would be zero".into(),
        ));
    }
    let two_sigma2 = T::lit(2.0) * sigma * sigma;
    let values = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            return T::zero();
        }
        let x = d.values[(i, j)];
        match kernel {
            Kernel::Gaussian => (-(x * x) / two_sigma2).exp(),
            Kernel::Literal => (x * x).exp() / sigma,
        }
    });
    Ok(AffinityMatrix { values, sigma })
}

/// Keeps `W(i,j)` only when `j` is among the `k` strongest affinities of
/// `i` or vice versa. Ties go to the smaller index.
pub fn sparsify_knn<T: Real>(w: &AffinityMatrix<T>, k: usize) -> Result<AffinityMatrix<T>> {
    let n = w.n();
    if k == 0 || k >= n {
        return Err(Error::Config(format!("knn sparsification needs 1 <= k < {n}, got {k}")));
    }
    let mut keep = vec![false; n * n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            w.values[(i, b)]
                .partial_cmp(&w.values[(i, a)])
                .expect("finite affinity")
                .then(a.cmp(&b))
        });
        for &j in &order[..k] {
            keep[i * n + j] = true;
            keep[j * n + i] = true;
        }
    }
    let values = Matrix::from_fn(n, n, |i, j| if keep[i * n + j] { w.values[(i, j)] } else { T::zero() });
    Ok(AffinityMatrix { values, sigma: w.sigma })
}

/// `Deg - W`, or `I - Deg^{-1/2} W Deg^{-1/2}`. Zero-degree nodes get an
/// identity row in the normalized form.
pub fn graph_laplacian<T: Real>(w: &AffinityMatrix<T>, normalization: Normalization) -> Result<LaplacianMatrix<T>> {
    validate_affinity(&w.values)?;
    let n = w.n();
    let degree: Vec<T> = w.values.row_iter().map(|r| r.iter().copied().sum()).collect();
    let values = match normalization {
        Normalization::Unnormalized => Matrix::from_fn(n, n, |i, j| if i == j { degree[i] } else { -w.values[(i, j)] }),
        Normalization::Symmetric => {
            let inv_sqrt: Vec<T> = degree
                .iter()
                .map(|&d| if d > T::zero() { T::one() / d.sqrt() } else { T::zero() })
                .collect();
            Matrix::from_fn(n, n, |i, j| {
                if i == j {
                    T::one()
                } else {
                    // Scale product first so the result is exactly symmetric.
                    -w.values[(i, j)] * (inv_sqrt[i] * inv_sqrt[j])
                }
            })
        }
    };
    Ok(LaplacianMatrix { values, normalization })
}
