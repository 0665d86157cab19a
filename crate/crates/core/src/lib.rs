//! Measurement-error simulation lab: replicate-measurement generators,
//! preparation pipelines, OLS with backward selection, small MLPs, variance
//! theory and the experiment harness that compares them.
//!
//! Numeric code is generic over [`Scalar`] (`f32`, `f64`).

pub mod analysis;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod linalg;
pub mod linreg;
pub mod neuralnet;
pub mod prepare;
pub mod randmath;
pub mod report;
pub mod scalar;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::{Scalar, Strided};

/// Double-precision instantiations.
pub type Matrix64 = linalg::Matrix<f64>;
pub type Dataset64 = datagen::Dataset<f64>;
pub type DesignMatrix64 = prepare::DesignMatrix<f64>;
pub type LinearModel64 = linreg::LinearModel<f64>;
pub type Mlp64 = neuralnet::Mlp<f64>;

/// Single-precision instantiations.
pub type Matrix32 = linalg::Matrix<f32>;
pub type Dataset32 = datagen::Dataset<f32>;
pub type DesignMatrix32 = prepare::DesignMatrix<f32>;
pub type LinearModel32 = linreg::LinearModel<f32>;
pub type Mlp32 = neuralnet::Mlp<f32>;
