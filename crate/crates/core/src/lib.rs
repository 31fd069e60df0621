//! Matrix-variate diffusion-index forecasting.
//!
//! Factors are extracted from a matrix time series with alpha-PCA, and a
//! scalar target is forecast through a bilinear form in those factors.

pub mod alpha_pca;
pub mod benchmarks;
pub mod bilinear_lse;
pub mod error;
pub mod evaluate;
pub mod linalg;
pub mod panel;
pub mod pipeline;
pub mod screening;
pub mod simulate;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate, AlignedPairs, FactorEstimate, FactorKind, LoadingEstimate, MatrixSeries, MomentMatrices, NoiseKind,
    ScalarSeries, SimTruth,
};
