//! Coefficient matrix assembly and unsupervised Laplacian-score selection.
//!
//! The raw Laplacian score of a feature is small when the feature varies
//! smoothly over a k-nearest-neighbour graph of the samples. Selection
//! discards *low* scores, so scores are published as an importance
//! `1 / (1 + raw)`: larger is better and constant features get exactly 0.

use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::wavelet::DecompResult;

/// Rows are images, columns are wavelet coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix<T> {
    pub values: Matrix<T>,
    pub image_ids: Vec<String>,
    pub feature_ids: Vec<String>,
}

impl<T: Real> CoefficientMatrix<T> {
    pub fn new(values: Matrix<T>, image_ids: Vec<String>, feature_ids: Vec<String>) -> Result<Self> {
        if values.rows() != image_ids.len() || values.cols() != feature_ids.len() {
            return Err(Error::Input(format!(
                "{}x{} coefficient matrix with {} image ids and {} feature ids",
                values.rows(),
                values.cols(),
                image_ids.len(),
                feature_ids.len()
            )));
        }
        Ok(Self {
            values,
            image_ids,
            feature_ids,
        })
    }

    pub fn n_images(&self) -> usize {
        self.values.rows()
    }

    pub fn n_features(&self) -> usize {
        self.values.cols()
    }
}

/// Stacks one decomposition per image. All decompositions must share the
/// same bookkeeping and basis.
pub fn assemble_coefficient_matrix<T: Real>(
    decomps: &[DecompResult<T>],
    image_ids: &[String],
) -> Result<CoefficientMatrix<T>> {
    let per_image: Vec<&[DecompResult<T>]> = decomps.iter().map(std::slice::from_ref).collect();
    assemble_inner(&per_image, image_ids)
}

/// Like [`assemble_coefficient_matrix`] for images decomposed channel by
/// channel: each row is the concatenation of the channels' coefficients and
/// feature ids are prefixed with `c<channel>/`.
pub fn assemble_multichannel<T: Real>(
    decomps: &[Vec<DecompResult<T>>],
    image_ids: &[String],
) -> Result<CoefficientMatrix<T>> {
    let per_image: Vec<&[DecompResult<T>]> = decomps.iter().map(Vec::as_slice).collect();
    assemble_inner(&per_image, image_ids)
}

fn assemble_inner<T: Real>(per_image: &[&[DecompResult<T>]], image_ids: &[String]) -> Result<CoefficientMatrix<T>> {
    if per_image.len() != image_ids.len() {
        return Err(Error::Input(format!(
            "{} decompositions for {} image ids",
            per_image.len(),
            image_ids.len()
        )));
    }
    let Some(reference) = per_image.first() else {
        return Err(Error::Input("no images to assemble".into()));
    };
    if reference.is_empty() {
        return Err(Error::Input(format!("image {} has no channels", image_ids[0])));
    }
    let mut seen = std::collections::HashSet::new();
    for id in image_ids {
        if !seen.insert(id) {
            return Err(Error::Input(format!("duplicate image id {id}")));
        }
    }

    for (channels, id) in per_image.iter().zip(image_ids).skip(1) {
        let same = channels.len() == reference.len()
            && channels
                .iter()
                .zip(reference.iter())
                .all(|(a, b)| a.beta == b.beta && a.basis == b.basis);
        if !same {
            return Err(Error::HeterogeneousDataset {
                image_id: id.clone(),
                reference_id: image_ids[0].clone(),
            });
        }
    }

    let multichannel = reference.len() > 1;
    let mut feature_ids = Vec::new();
    for (ch, d) in reference.iter().enumerate() {
        for id in d.beta.feature_ids() {
            if multichannel {
                feature_ids.push(format!("c{ch}/{id}"));
            } else {
                feature_ids.push(id);
            }
        }
    }
    let width = feature_ids.len();
    let mut data = Vec::with_capacity(width * per_image.len());
    for channels in per_image {
        for d in channels.iter() {
            data.extend_from_slice(&d.omega);
        }
    }
    let values = Matrix::from_vec(per_image.len(), width, data)?;
    CoefficientMatrix::new(values, image_ids.to_vec(), feature_ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Median of the k-nearest-neighbour distances.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Neighbours per sample; `None` means `min(5, n - 1)`.
    pub k_neighbors: Option<usize>,
    pub bandwidth: Bandwidth,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            k_neighbors: None,
            bandwidth: Bandwidth::Auto,
        }
    }
}

/// Per-column Laplacian scores. `raw` is the smoothness ratio (lower is
/// smoother, `+inf` for constant columns); `importance` is `1 / (1 + raw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScores<T> {
    pub ids: Vec<String>,
    pub raw: Vec<T>,
    pub importance: Vec<T>,
}

impl<T: Real> FeatureScores<T> {
    pub fn max_importance(&self) -> T {
        self.importance
            .iter()
            .copied()
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    /// Audit dump: `feature_id,importance,raw_score`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature_id", "importance", "raw_score"])?;
        for ((id, imp), raw) in self.ids.iter().zip(&self.importance).zip(&self.raw) {
            w.write_record([id.as_str(), &imp.to_string(), &raw.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("feature scores", e))?;
        Ok(())
    }
}

/// Symmetrized k-nearest-neighbour graph with heat-kernel weights.
#[derive(Debug, Clone)]
pub struct KnnGraph<T> {
    /// Undirected edges `(i, j, weight)` with `i < j`.
    pub edges: Vec<(usize, usize, T)>,
    pub degree: Vec<T>,
    pub bandwidth: T,
}

/// Builds the scoring graph over the rows of `x`: `j` and `i` are joined
/// when either is among the other's `k` nearest rows (Euclidean), with
/// weight `exp(-d² / (2h²))`.
pub fn knn_heat_graph<T: Real>(x: &Matrix<T>, k: usize, bandwidth: Bandwidth) -> Result<KnnGraph<T>> {
    let n = x.rows();
    if n < 3 {
        return Err(Error::Input(format!(
            "Laplacian score needs at least 3 samples, got {n}"
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::Config(format!("k_neighbors must be in 1..{n}, got {k}")));
    }

    let neighbours: Vec<Vec<(usize, T)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut d: Vec<(usize, T)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let s: T = xi.iter().zip(x.row(j)).map(|(&a, &b)| (a - b) * (a - b)).sum();
                    (j, s.sqrt())
                })
                .collect();
            d.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(a.0.cmp(&b.0)));
            d.truncate(k);
            d
        })
        .collect();

    let h = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => T::lit(h),
        Bandwidth::Fixed(h) => return Err(Error::Config(format!("bandwidth must be positive, got {h}"))),
        Bandwidth::Auto => {
            let mut all: Vec<T> = neighbours.iter().flatten().map(|&(_, d)| d).collect();
            all.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let med = median_sorted(&all);
            if med > T::zero() {
                med
            } else {
                T::one()
            }
        }
    };

    let mut pairs: Vec<(usize, usize, T)> = neighbours
        .iter()
        .enumerate()
        .flat_map(|(i, list)| list.iter().map(move |&(j, d)| (i.min(j), i.max(j), d)))
        .collect();
    pairs.sort_by_key(|p| (p.0, p.1));
    pairs.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);

    let two_h2 = T::lit(2.0) * h * h;
    let mut degree = vec![T::zero(); n];
    let edges: Vec<(usize, usize, T)> = pairs
        .into_iter()
        .map(|(i, j, d)| {
            let w = (-(d * d) / two_h2).exp();
            degree[i] = degree[i] + w;
            degree[j] = degree[j] + w;
            (i, j, w)
        })
        .collect();
    Ok(KnnGraph {
        edges,
        degree,
        bandwidth: h,
    })
}

fn median_sorted<T: Real>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / T::lit(2.0)
    }
}

const SCORE_CHUNK: usize = 512;

/// Scores every column of `c`.
pub fn laplacian_score<T: Real>(c: &CoefficientMatrix<T>, config: &ScoreConfig) -> Result<FeatureScores<T>> {
    let n = c.n_images();
    let k = config.k_neighbors.unwrap_or_else(|| 5.min(n.saturating_sub(1)));
    let graph = knn_heat_graph(&c.values, k, config.bandwidth)?;
    let (raw, importance) = score_with_graph(&c.values, &graph);
    let constant = importance.iter().filter(|&&v| v == T::zero()).count();
    if constant > 0 {
        warn!(
            "{constant} of {} features are constant across images; importance set to 0",
            c.n_features()
        );
    }
    Ok(FeatureScores {
        ids: c.feature_ids.clone(),
        raw,
        importance,
    })
}

/// Raw scores and importances for every column of `x` on a prebuilt graph.
pub fn score_with_graph<T: Real>(x: &Matrix<T>, graph: &KnnGraph<T>) -> (Vec<T>, Vec<T>) {
    let m = x.cols();
    let total_degree: T = graph.degree.iter().copied().sum();
    let starts: Vec<usize> = (0..m).step_by(SCORE_CHUNK).collect();
    let chunks: Vec<(Vec<T>, Vec<T>)> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + SCORE_CHUNK).min(m);
            let width = end - start;
            let mut mean = vec![T::zero(); width];
            let mut lo = vec![T::infinity(); width];
            let mut hi = vec![T::neg_infinity(); width];
            for (i, &deg) in graph.degree.iter().enumerate() {
                for (c, &v) in x.row(i)[start..end].iter().enumerate() {
                    mean[c] = mean[c] + deg * v;
                    lo[c] = lo[c].min(v);
                    hi[c] = hi[c].max(v);
                }
            }
            for v in &mut mean {
                *v = *v / total_degree;
            }
            let mut den = vec![T::zero(); width];
            for (i, &deg) in graph.degree.iter().enumerate() {
                for (c, &v) in x.row(i)[start..end].iter().enumerate() {
                    let t = v - mean[c];
                    den[c] = den[c] + deg * t * t;
                }
            }
            let mut num = vec![T::zero(); width];
            for &(i, j, w) in &graph.edges {
                let (ri, rj) = (&x.row(i)[start..end], &x.row(j)[start..end]);
                for c in 0..width {
                    let d = ri[c] - rj[c];
                    num[c] = num[c] + w * d * d;
                }
            }
            let mut raw = Vec::with_capacity(width);
            let mut importance = Vec::with_capacity(width);
            for c in 0..width {
                if lo[c] == hi[c] || den[c] <= T::zero() {
                    raw.push(T::infinity());
                    importance.push(T::zero());
                } else {
                    let r = num[c] / den[c];
                    raw.push(r);
                    importance.push(T::one() / (T::one() + r));
                }
            }
            (raw, importance)
        })
        .collect();
    let mut raw = Vec::with_capacity(m);
    let mut importance = Vec::with_capacity(m);
    for (r, i) in chunks {
        raw.extend(r);
        importance.extend(i);
    }
    (raw, importance)
}

/// Selection rule for [`select_features`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum Threshold {
    /// Drop columns whose importance is below this value.
    Absolute(f64),
    /// Keep the `ceil(p * m)` most important columns.
    KeepTop(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::KeepTop(0.2)
    }
}

impl Threshold {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Threshold::Absolute(t) if t.is_finite() => Ok(()),
            Threshold::KeepTop(p) if p > 0.0 && p <= 1.0 => Ok(()),
            Threshold::Absolute(t) => Err(Error::Config(format!("threshold must be finite, got {t}"))),
            Threshold::KeepTop(p) => Err(Error::Config(format!("keep-top fraction must be in (0, 1], got {p}"))),
        }
    }
}

/// Indices of surviving columns, ascending.
pub fn selected_indices<T: Real>(scores: &FeatureScores<T>, threshold: Threshold) -> Result<Vec<usize>> {
    threshold.validate()?;
    let m = scores.importance.len();
    let keep: Vec<usize> = match threshold {
        Threshold::Absolute(tau) => {
            let tau = T::lit(tau);
            (0..m).filter(|&i| scores.importance[i] >= tau).collect()
        }
        Threshold::KeepTop(p) => {
            let count = ((p * m as f64).ceil() as usize).clamp(usize::from(m > 0), m);
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| {
                scores.importance[b]
                    .partial_cmp(&scores.importance[a])
                    .expect("finite importance")
                    .then(a.cmp(&b))
            });
            order.truncate(count);
            order.sort_unstable();
            order
        }
    };
    if keep.is_empty() {
        let threshold = match threshold {
            Threshold::Absolute(t) | Threshold::KeepTop(t) => t,
        };
        return Err(Error::ThresholdTooAggressive {
            threshold,
            max_score: scores.max_importance().to_f64_lossy(),
        });
    }
    Ok(keep)
}

/// Drops low-importance columns, preserving the order of the survivors.
pub fn select_features<T: Real>(
    c: &CoefficientMatrix<T>,
    scores: &FeatureScores<T>,
    threshold: Threshold,
) -> Result<CoefficientMatrix<T>> {
    if scores.ids.len() != c.n_features() || scores.ids != c.feature_ids {
        return Err(Error::Input(
            "feature scores are not aligned with the coefficient matrix columns".into(),
        ));
    }
    let keep = selected_indices(scores, threshold)?;
    Ok(CoefficientMatrix {
        values: c.values.select_columns(&keep),
        image_ids: c.image_ids.clone(),
        feature_ids: keep.iter().map(|&i| c.feature_ids[i].clone()).collect(),
    })
}
