//! Community detection for unlabeled image datasets.
//!
//! Images are decomposed with a multi-level 2D Daubechies wavelet transform,
//! the coefficients are filtered by unsupervised Laplacian score, and the
//! surviving features feed a correlation-distance affinity graph whose
//! normalized Laplacian spectrum gives both the number of communities and
//! the spectral embedding used to find them. For labeled datasets the same
//! affinity matrix places every image on a signed severity axis.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below are what the pipeline and the on-disk artifacts use.

// `!(x > 0)` checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod affinity;
pub mod artifacts;
pub mod dataset;
mod error;
pub mod feature_select;
pub mod linalg;
pub mod matrix;
pub mod pipeline;
pub mod scalar;
pub mod spectral;
pub mod spectrum;
pub mod synthetic;
pub mod wavelet;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Real;

pub type Matrix64 = matrix::Matrix<f64>;
pub type Matrix32 = matrix::Matrix<f32>;
pub type DecompResult64 = wavelet::DecompResult<f64>;
pub type WaveletBasis64 = wavelet::WaveletBasis<f64>;
pub type CoefficientMatrix64 = feature_select::CoefficientMatrix<f64>;
pub type DistanceMatrix64 = affinity::DistanceMatrix<f64>;
pub type AffinityMatrix64 = affinity::AffinityMatrix<f64>;
pub type LaplacianMatrix64 = affinity::LaplacianMatrix<f64>;
pub type LaplacianSpectrum64 = spectral::LaplacianSpectrum<f64>;
pub type ImageRecord64 = dataset::ImageRecord<f64>;
