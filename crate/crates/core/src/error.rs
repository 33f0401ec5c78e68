use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error(
        "cannot decompose {rows}x{cols} image to {levels} levels (level {failed_at} input is {at_rows}x{at_cols})"
    )]
    DecompositionDepth {
        rows: usize,
        cols: usize,
        levels: usize,
        failed_at: usize,
        at_rows: usize,
        at_cols: usize,
    },

    #[error("corrupt decomposition: {0}")]
    CorruptDecomposition(String),

    #[error("heterogeneous dataset: image {image_id} has a different coefficient layout than {reference_id}; resize images to a common size first")]
    HeterogeneousDataset { image_id: String, reference_id: String },

    #[error("threshold {threshold} discards every feature (max observed score {max_score})")]
    ThresholdTooAggressive { threshold: f64, max_score: f64 },

    #[error("image {image_id} has zero-variance features; correlation distance is undefined")]
    DegenerateFeature { image_id: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid affinity matrix: {0}")]
    InvalidAffinity(String),

    #[error("eigensolver failed to converge for eigenvalue {index} after {iterations} iterations (off-diagonal residual {residual:e})")]
    Convergence {
        index: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("insufficient class: {0}")]
    InsufficientClass(String),

    #[error("dataset contains no valid images ({failures} file(s) failed to load)")]
    EmptyDataset { failures: usize },

    #[error("corrupt artifact {path}: {reason}")]
    CorruptArtifact { path: PathBuf, reason: String },

    #[error("artifact {path} has format version {found}, this build reads version {expected}; re-run the pipeline stage that produced it")]
    VersionMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("image decode error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs rather than a failing stage.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Input(_)
                | Error::EmptyDataset { .. }
                | Error::HeterogeneousDataset { .. }
                | Error::InsufficientClass(_)
                | Error::MissingArtifact(_)
                | Error::VersionMismatch { .. }
        )
    }
}
