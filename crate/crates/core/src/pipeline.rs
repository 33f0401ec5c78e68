//! End-to-end stage composition shared by the command line and tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{
    affinity_with_kernel, pairwise_distances, sparsify_knn, AffinityMatrix, DistanceMatrix, Kernel, Metric,
};
use crate::error::{Error, Result};
use crate::feature_select::{
    assemble_multichannel, laplacian_score, select_features, CoefficientMatrix, FeatureScores, ScoreConfig, Threshold,
};
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::spectral::{detect_communities, DetectConfig, Detection};
use crate::wavelet::{basis_filters, wavedec2, BasisName, DecompResult, DEFAULT_LEVELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub basis: BasisName,
    pub levels: usize,
    pub threshold: Threshold,
    pub score: ScoreConfig,
    pub metric: Metric,
    pub kernel: Kernel,
    /// Optional k-nearest-neighbour sparsification of the affinity matrix.
    pub knn: Option<usize>,
    pub detect: DetectConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            basis: BasisName::Db3,
            levels: DEFAULT_LEVELS,
            threshold: Threshold::default(),
            score: ScoreConfig::default(),
            metric: Metric::Correlation,
            kernel: Kernel::Gaussian,
            knn: None,
            detect: DetectConfig::default(),
        }
    }
}

/// Decomposes every channel of every image in parallel.
pub fn decompose_all<T: Real>(
    images: &[Vec<Matrix<T>>],
    basis: BasisName,
    levels: usize,
) -> Result<Vec<Vec<DecompResult<T>>>> {
    let filters = basis_filters::<T>(basis);
    images
        .par_iter()
        .map(|channels| channels.iter().map(|c| wavedec2(c, &filters, levels)).collect())
        .collect()
}

/// Everything from the coefficient matrix onwards.
#[derive(Debug, Clone)]
pub struct GraphStages<T> {
    pub scores: FeatureScores<T>,
    pub selected: CoefficientMatrix<T>,
    pub distances: DistanceMatrix<T>,
    pub affinity: AffinityMatrix<T>,
}

pub fn build_graph<T: Real>(coeffs: &CoefficientMatrix<T>, cfg: &PipelineConfig) -> Result<GraphStages<T>> {
    let scores = laplacian_score(coeffs, &cfg.score)?;
    let selected = select_features(coeffs, &scores, cfg.threshold)?;
    let distances = pairwise_distances(&selected, cfg.metric)?;
    let mut affinity = affinity_with_kernel(&distances, cfg.kernel)?;
    if let Some(k) = cfg.knn {
        affinity = sparsify_knn(&affinity, k)?;
    }
    Ok(GraphStages {
        scores,
        selected,
        distances,
        affinity,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub decompositions: Vec<Vec<DecompResult<T>>>,
    pub coeffs: CoefficientMatrix<T>,
    pub graph: GraphStages<T>,
    pub detection: Detection<T>,
}

/// Runs decomposition, scoring, selection, affinity and detection.
/// `images[i]` holds the channels of image `i`.
pub fn run<T: Real>(images: &[Vec<Matrix<T>>], ids: &[String], cfg: &PipelineConfig) -> Result<PipelineOutput<T>> {
    if cfg.kernel == Kernel::Literal {
        return Err(Error::Config(
            "the literal kernel grows with distance and cannot drive community detection".into(),
        ));
    }
    let decompositions = decompose_all(images, cfg.basis, cfg.levels)?;
    let coeffs = assemble_multichannel(&decompositions, ids)?;
    let graph = build_graph(&coeffs, cfg)?;
    let detection = detect_communities(&graph.affinity, ids, &cfg.detect)?;
    Ok(PipelineOutput {
        decompositions,
        coeffs,
        graph,
        detection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::purity;
    use crate::synthetic::{planted_dataset, PlantedConfig};

    #[test]
    fn recovers_three_planted_templates() {
        let imgs = planted_dataset(&PlantedConfig {
            templates: 3,
            per_template: 10,
            rows: 32,
            cols: 32,
            ..Default::default()
        })
        .unwrap();
        let ids: Vec<String> = imgs.iter().map(|i| i.id.clone()).collect();
        let truth: Vec<String> = imgs.iter().map(|i| i.label.clone()).collect();
        let channels: Vec<Vec<Matrix<f64>>> = imgs.into_iter().map(|i| vec![i.pixels]).collect();
        let out = run(&channels, &ids, &PipelineConfig::default()).unwrap();
        assert_eq!(out.detection.communities.n_c, 3);
        assert_eq!(purity(&out.detection.communities.assignments, &truth), 1.0);
    }

    #[test]
    fn literal_kernel_is_refused() {
        let cfg = PipelineConfig {
            kernel: Kernel::Literal,
            ..Default::default()
        };
        let imgs = vec![vec![Matrix::<f64>::zeros(8, 8)]; 3];
        let ids: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        assert!(matches!(run(&imgs, &ids, &cfg), Err(Error::Config(_))));
    }
}
