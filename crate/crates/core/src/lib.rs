//! Gaussian processes on the unit sphere with nonstationary, locally
//! anisotropic Matérn covariances built from chordal distance.
//!
//! The crate covers the full workflow: covariance evaluation, Vecchia
//! likelihood approximation, robust adaptive Metropolis inference, kriging
//! prediction, simulation, data splitting and proper scoring.

pub mod covariance;
pub mod data;
pub mod error;
pub mod geometry;
pub mod inference;
mod linalg;
pub mod pipeline;
pub mod scoring;
pub mod simulate;
pub mod vecchia;

pub use covariance::{CovarianceModel, GammaField, ModelKind, ModelParams};
pub use data::{Dataset, RegionSpec, Split};
pub use error::{Error, ErrorClass, Result};
pub use geometry::{EuclideanPoint, Mat3, SphericalPoint};
pub use inference::{Chain, FixedParams, ParamVector, PredictiveConfig, Prior, RamConfig};
pub use pipeline::{ExperimentConfig, Preset, Scores};
pub use scoring::PredictiveMixture;
pub use simulate::GridSpec;
pub use vecchia::{GaussianPredictive, VecchiaPlan};
