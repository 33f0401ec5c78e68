//! Laplacian spectrum, cluster-count estimation and normalized spectral
//! clustering.

use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{graph_laplacian, AffinityMatrix, LaplacianMatrix, Normalization};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Gaps below this are treated as numerical noise.
pub const GAP_NOISE_FLOOR: f64 = 1e-12;
pub const KMEANS_RESTARTS: usize = 50;
const KMEANS_MAX_ITER: usize = 300;
const ZERO_ROW_NORM: f64 = 1e-10;

/// The `k` smallest eigenpairs, eigenvalues ascending, eigenvectors as
/// columns. Each eigenvector's largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct LaplacianSpectrum<T> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: Matrix<T>,
}

impl<T: Real> LaplacianSpectrum<T> {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `max_j ‖L·v_j − λ_j·v_j‖∞`.
    pub fn max_residual(&self, l: &Matrix<T>) -> T {
        let mut worst = T::zero();
        for j in 0..self.k() {
            let v = self.eigenvectors.column(j);
            let lv = l.mul_vec(&v);
            for (a, b) in lv.iter().zip(&v) {
                let r = (*a - self.eigenvalues[j] * *b).abs();
                if r > worst {
                    worst = r;
                }
            }
        }
        worst
    }

    /// Keeps the first `k` eigenpairs.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.k());
        let n = self.eigenvectors.rows();
        Self {
            eigenvalues: self.eigenvalues[..k].to_vec(),
            eigenvectors: Matrix::from_fn(n, k, |r, c| self.eigenvectors[(r, c)]),
        }
    }
}

/// `k` smallest eigenpairs of a symmetric Laplacian.
pub fn eigendecompose<T: Real>(l: &LaplacianMatrix<T>, k: usize) -> Result<LaplacianSpectrum<T>> {
    eigendecompose_matrix(&l.values, k)
}

pub fn eigendecompose_matrix<T: Real>(l: &Matrix<T>, k: usize) -> Result<LaplacianSpectrum<T>> {
    let n = l.rows();
    if !l.is_square() {
        return Err(Error::Input(format!(
            "Laplacian must be square, got {}x{}",
            l.rows(),
            l.cols()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("requested {k} eigenpairs of a {n}x{n} matrix")));
    }
    let asym = l.asymmetry().unwrap_or_else(T::zero);
    if asym > crate::affinity::symmetry_tolerance(l) {
        return Err(Error::Input(format!("Laplacian is not symmetric (asymmetry {asym})")));
    }
    let eig = symmetric_eigen(l)?;
    let mut eigenvectors = Matrix::from_fn(n, k, |r, c| eig.eigenvectors[(r, c)]);
    for c in 0..k {
        let mut pivot = 0;
        for r in 1..n {
            if eigenvectors[(r, c)].abs() > eigenvectors[(pivot, c)].abs() {
                pivot = r;
            }
        }
        if eigenvectors[(pivot, c)] < T::zero() {
            for r in 0..n {
                eigenvectors[(r, c)] = -eigenvectors[(r, c)];
            }
        }
    }
    Ok(LaplacianSpectrum {
        eigenvalues: eig.eigenvalues[..k].to_vec(),
        eigenvectors,
    })
}

/// Default upper bound on the number of clusters considered: `min(50, n/4)`,
/// at least 1 and below `n`.
pub fn default_max_k(n: usize) -> usize {
    (n / 4).clamp(1, 50).min(n.saturating_sub(1).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMethod {
    /// Position of the largest gap among the smallest eigenvalues.
    #[default]
    Eigengap,
    /// Number of eigenvalues below `τ_c`.
    NearZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCountEstimate<T> {
    pub eigengap: usize,
    pub near_zero: usize,
    /// `gaps[i] = λ_{i+2} − λ_{i+1}` (1-based eigenvalues), `i < max_k`.
    pub gaps: Vec<T>,
    pub tau_c: T,
    pub warnings: Vec<String>,
}

impl<T> ClusterCountEstimate<T> {
    pub fn get(&self, method: CountMethod) -> usize {
        match method {
            CountMethod::Eigengap => self.eigengap,
            CountMethod::NearZero => self.near_zero,
        }
    }
}

/// Default `τ_c` for the near-zero count: `1e-8 · max(1, λ_max)`.
pub fn auto_tau_c<T: Real>(eigenvalues: &[T]) -> T {
    let top = eigenvalues.last().copied().unwrap_or_else(T::one);
    T::lit(1e-8) * top.abs().max(T::one())
}

/// Estimates the cluster count both ways.
///
/// Eigengap: `n_c = argmax_{1≤i≤max_k} (λ_{i+1} − λ_i)`. Gaps equal to the
/// maximum within a relative `1e-9` are ties and resolve to the smallest
/// index with a warning. If every gap is below [`GAP_NOISE_FLOOR`] the
/// spectrum is undifferentiated and `n_c = 1`.
pub fn estimate_num_clusters<T: Real>(
    eigenvalues: &[T],
    max_k: usize,
    tau_c: Option<T>,
) -> Result<ClusterCountEstimate<T>> {
    if max_k == 0 {
        return Err(Error::Config("max_k must be at least 1".into()));
    }
    if eigenvalues.len() < max_k + 1 {
        return Err(Error::Input(format!(
            "need {} eigenvalues for max_k = {max_k}, got {}",
            max_k + 1,
            eigenvalues.len()
        )));
    }
    if eigenvalues.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Input("eigenvalues must be ascending and finite".into()));
    }

    let gaps: Vec<T> = eigenvalues[..=max_k].windows(2).map(|w| w[1] - w[0]).collect();
    let mut warnings = Vec::new();
    let max_gap = gaps.iter().copied().fold(T::zero(), T::max);
    let eigengap = if max_gap < T::lit(GAP_NOISE_FLOOR) {
        warnings.push(
            "eigenvalue gaps are all below numerical noise; spectrum is undifferentiated, using 1 cluster".to_string(),
        );
        1
    } else {
        let tie = max_gap * T::lit(1e-9);
        let winners: Vec<usize> = gaps
            .iter()
            .enumerate()
            .filter(|(_, &g)| max_gap - g <= tie)
            .map(|(i, _)| i + 1)
            .collect();
        if winners.len() > 1 {
            warnings.push(format!(
                "{} eigenvalue gaps tie for largest; choosing the smallest cluster count {}",
                winners.len(),
                winners[0]
            ));
        }
        winners[0]
    };

    let tau_c = tau_c.unwrap_or_else(|| auto_tau_c(eigenvalues));
    let near_zero = eigenvalues.iter().filter(|&&l| l < tau_c).count().max(1);

    for w in &warnings {
        warn!("{w}");
    }
    Ok(ClusterCountEstimate {
        eigengap,
        near_zero,
        gaps,
        tau_c,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct KMeansResult<T> {
    pub labels: Vec<usize>,
    pub centroids: Matrix<T>,
    pub inertia: T,
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding; the best of `restarts` runs by
/// inertia wins (earliest on ties). Deterministic for a given seed.
pub fn kmeans<T: Real>(points: &Matrix<T>, k: usize, restarts: usize, seed: u64) -> Result<KMeansResult<T>> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k-means needs 1 <= k <= {n}, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult<T>> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn kmeans_plus_plus<T: Real>(points: &Matrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let n = points.rows();
    let d = points.cols();
    let mut centroids = Matrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut closest: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(0)).to_f64_lossy())
        .collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, slot) in closest.iter_mut().enumerate() {
            let dist = sq_dist(points.row(i), centroids.row(c)).to_f64_lossy();
            if dist < *slot {
                *slot = dist;
            }
        }
    }
    centroids
}

fn nearest<T: Real>(p: &[T], centroids: &Matrix<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for c in 0..centroids.rows() {
        let d = sq_dist(p, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_once<T: Real>(points: &Matrix<T>, k: usize, rng: &mut ChaCha8Rng) -> KMeansResult<T> {
    let (n, dim) = points.shape();
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(points.row(i), &centroids);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Matrix::<T>::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, &v) in sums.row_mut(labels[i]).iter_mut().zip(points.row(i)) {
                *s = *s + v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster with the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(points.row(a), centroids.row(labels[a]));
                        let db = sq_dist(points.row(b), centroids.row(labels[b]));
                        da.partial_cmp(&db).expect("finite").then(b.cmp(&a))
                    })
                    .expect("n > 0");
                centroids.row_mut(c).copy_from_slice(points.row(far));
                labels[far] = c;
            } else {
                let inv = T::one() / T::from_usize_lossy(counts[c]);
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    let mut inertia = T::zero();
    for i in 0..n {
        let (c, d) = nearest(points.row(i), &centroids);
        labels[i] = c;
        inertia = inertia + d;
    }
    KMeansResult {
        labels,
        centroids,
        inertia,
    }
}

/// Communities found in one dataset.
///
/// Cluster ids are canonical: cluster 0 is the largest, ties broken by the
/// smallest member index, so the ids do not depend on k-means labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityResult<T> {
    pub n_c: usize,
    pub image_ids: Vec<String>,
    /// `assignments[i]` is the cluster of image `i`.
    pub assignments: Vec<usize>,
    /// Image indices grouped cluster by cluster.
    pub permutation: Vec<usize>,
    pub eigenvalues: Vec<T>,
    pub eigengap_profile: Vec<T>,
}

impl<T: Real> CommunityResult<T> {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_c];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == cluster)
            .collect()
    }
}

/// Canonical relabelling: clusters ordered by size descending, ties by
/// smallest member. Returns the new labels and the grouping permutation.
pub fn canonical_order(assignments: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<(usize, usize)>) {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &a) in assignments.iter().enumerate() {
        groups.entry(a).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    let mut labels = vec![0; assignments.len()];
    let mut permutation = Vec::with_capacity(assignments.len());
    let mut blocks = Vec::with_capacity(groups.len());
    for (id, members) in groups.iter().enumerate() {
        let start = permutation.len();
        for &m in members {
            labels[m] = id;
            permutation.push(m);
        }
        blocks.push((start, permutation.len()));
    }
    (labels, permutation, blocks)
}

/// Clusters the rows of the `n_c` leading eigenvectors after normalizing
/// each row to unit length. Zero rows (isolated nodes) get singleton
/// clusters while `n_c` allows it.
pub fn cluster_spectrum<T: Real>(spectrum: &LaplacianSpectrum<T>, n_c: usize, seed: u64) -> Result<Vec<usize>> {
    let n = spectrum.eigenvectors.rows();
    if n_c == 0 || n_c > n {
        return Err(Error::Config(format!("n_c must be in 1..={n}, got {n_c}")));
    }
    if spectrum.k() < n_c {
        return Err(Error::Input(format!(
            "spectrum has {} eigenvectors, need {n_c}",
            spectrum.k()
        )));
    }
    if n_c == 1 {
        return Ok(vec![0; n]);
    }
    let mut embedding = Matrix::from_fn(n, n_c, |r, c| spectrum.eigenvectors[(r, c)]);
    let mut zero_rows = Vec::new();
    for r in 0..n {
        let row = embedding.row_mut(r);
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm < T::lit(ZERO_ROW_NORM) {
            zero_rows.push(r);
        } else {
            row.iter_mut().for_each(|v| *v = *v / norm);
        }
    }

    if !zero_rows.is_empty() && zero_rows.len() < n_c {
        warn!("{} isolated node(s) placed in singleton clusters", zero_rows.len());
        let rest: Vec<usize> = (0..n).filter(|r| !zero_rows.contains(r)).collect();
        let points = Matrix::from_fn(rest.len(), n_c, |r, c| embedding[(rest[r], c)]);
        let k = n_c - zero_rows.len();
        let km = kmeans(&points, k, KMEANS_RESTARTS, seed)?;
        let mut labels = vec![0; n];
        for (idx, &r) in rest.iter().enumerate() {
            labels[r] = km.labels[idx];
        }
        for (offset, &r) in zero_rows.iter().enumerate() {
            labels[r] = k + offset;
        }
        return Ok(labels);
    }
    if !zero_rows.is_empty() {
        warn!(
            "{} isolated node(s) exceed n_c = {n_c}; assigned to nearest centroid",
            zero_rows.len()
        );
    }
    Ok(kmeans(&embedding, n_c, KMEANS_RESTARTS, seed)?.labels)
}

/// Normalized spectral clustering of an affinity matrix into `n_c`
/// communities.
pub fn spectral_cluster<T: Real>(
    w: &AffinityMatrix<T>,
    image_ids: &[String],
    n_c: usize,
    seed: u64,
) -> Result<CommunityResult<T>> {
    let l = graph_laplacian(w, Normalization::Symmetric)?;
    let spectrum = eigendecompose(&l, n_c.max(1).min(w.n()))?;
    let labels = cluster_spectrum(&spectrum, n_c, seed)?;
    build_result(image_ids, &labels, spectrum.eigenvalues, Vec::new())
}

pub(crate) fn build_result<T: Real>(
    image_ids: &[String],
    labels: &[usize],
    eigenvalues: Vec<T>,
    eigengap_profile: Vec<T>,
) -> Result<CommunityResult<T>> {
    if image_ids.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} image ids for {} assignments",
            image_ids.len(),
            labels.len()
        )));
    }
    let (assignments, permutation, blocks) = canonical_order(labels);
    Ok(CommunityResult {
        n_c: blocks.len(),
        image_ids: image_ids.to_vec(),
        assignments,
        permutation,
        eigenvalues,
        eigengap_profile,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub max_k: Option<usize>,
    pub tau_c: Option<f64>,
    pub method: CountMethod,
    /// Skips estimation entirely.
    pub n_c_override: Option<usize>,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            max_k: None,
            tau_c: None,
            method: CountMethod::Eigengap,
            n_c_override: None,
            seed: 7,
        }
    }
}

/// Everything downstream of the affinity matrix in one call.
#[derive(Debug, Clone)]
pub struct Detection<T> {
    pub communities: CommunityResult<T>,
    pub estimate: Option<ClusterCountEstimate<T>>,
    pub max_k: usize,
    pub spectrum_residual: T,
}

/// Symmetric Laplacian, spectrum, cluster count, clustering, reordering.
pub fn detect_communities<T: Real>(
    w: &AffinityMatrix<T>,
    image_ids: &[String],
    config: &DetectConfig,
) -> Result<Detection<T>> {
    let n = w.n();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 images, got {n}")));
    }
    let l = graph_laplacian(w, Normalization::Symmetric)?;
    let max_k = config.max_k.unwrap_or_else(|| default_max_k(n));
    if max_k == 0 || max_k >= n {
        return Err(Error::Config(format!("max_k must be in 1..{n}, got {max_k}")));
    }
    let wanted = (max_k + 1).max(config.n_c_override.unwrap_or(0)).min(n);
    let spectrum = eigendecompose(&l, wanted)?;
    let residual = spectrum.max_residual(&l.values);

    let (n_c, estimate) = match config.n_c_override {
        Some(k) => (k, None),
        None => {
            let est = estimate_num_clusters(&spectrum.eigenvalues, max_k, config.tau_c.map(T::lit))?;
            (est.get(config.method), Some(est))
        }
    };
    if n_c > wanted {
        return Err(Error::Config(format!(
            "cluster count {n_c} exceeds the {wanted} eigenpairs computed"
        )));
    }
    let labels = cluster_spectrum(&spectrum, n_c, config.seed)?;
    let gaps = estimate
        .as_ref()
        .map(|e| e.gaps.clone())
        .unwrap_or_else(|| spectrum.eigenvalues.windows(2).map(|w| w[1] - w[0]).collect());
    let communities = build_result(image_ids, &labels, spectrum.eigenvalues.clone(), gaps)?;
    Ok(Detection {
        communities,
        estimate,
        max_k,
        spectrum_residual: residual,
    })
}

/// A similarity matrix with rows and columns grouped by cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ReorderedSimilarity<T> {
    pub matrix: Matrix<T>,
    pub permutation: Vec<usize>,
    /// Half-open `[start, end)` ranges of each diagonal block.
    pub blocks: Vec<(usize, usize)>,
}

impl<T> ReorderedSimilarity<T> {
    /// Indices where a new block starts, excluding 0.
    pub fn boundaries(&self) -> Vec<usize> {
        self.blocks.iter().skip(1).map(|b| b.0).collect()
    }
}

/// Symmetric permutation grouping clusters contiguously, largest first.
pub fn reorder_similarity<T: Real>(w: &Matrix<T>, assignments: &[usize]) -> Result<ReorderedSimilarity<T>> {
    if !w.is_square() || w.rows() != assignments.len() {
        return Err(Error::Input(format!(
            "{}x{} matrix with {} assignments",
            w.rows(),
            w.cols(),
            assignments.len()
        )));
    }
    let (_, permutation, blocks) = canonical_order(assignments);
    Ok(ReorderedSimilarity {
        matrix: w.permute_symmetric(&permutation),
        permutation,
        blocks,
    })
}

/// Fraction of samples whose cluster's majority label matches their own.
pub fn purity<L: Ord + Clone>(assignments: &[usize], truth: &[L]) -> f64 {
    assert_eq!(assignments.len(), truth.len());
    if assignments.is_empty() {
        return 1.0;
    }
    let mut table: BTreeMap<usize, BTreeMap<L, usize>> = BTreeMap::new();
    for (a, t) in assignments.iter().zip(truth) {
        *table.entry(*a).or_default().entry(t.clone()).or_default() += 1;
    }
    let correct: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    correct as f64 / assignments.len() as f64
}
