//! Imputation of missing values in multivariate time series by GRU-based
//! regressors trained with random drops, ensembling, and entropy-gated
//! self-training, plus the classical fill baselines used for comparison.

pub mod adam;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod graph;
pub mod losses;
pub mod masking;
pub mod models;
pub mod rng;
pub mod scalar;
pub mod selftrain;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Default scalar type for experiments; evaluation paths stay in f64.
pub type Real = f64;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
