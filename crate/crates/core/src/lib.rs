//! Estimation and decomposition of the epistemic variance of wide ReLU
//! network predictions.
//!
//! The prediction variance at a test point splits into a *procedural* part
//! (random initialization) and a *data* part (finite training sample). This
//! crate provides
//!
//! * the infinite-width neural tangent kernel and its kernel ridge predictor
//!   ([`ntk`], [`krr`]),
//! * a small full-batch trainer for bias-free ReLU networks ([`net`]),
//! * three estimators: influence function, ensemble variance and batching
//!   ([`estimators`]),
//! * a retraining ground-truth oracle ([`oracle`]),
//! * synthetic data and CSV ingestion ([`data`]),
//! * an experiment harness used by the `epivar` CLI ([`experiment`]).
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`, which is what the harness uses.

pub mod chi2;
pub mod data;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod krr;
pub mod linalg;
pub mod net;
pub mod ntk;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod selfcheck;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Dataset = data::Dataset<f64>;
pub type GramMatrix = ntk::GramMatrix<f64>;
pub type TrainedNet = net::TrainedNet<f64>;
pub type KrrModel = krr::KrrModel<f64>;
pub type VarianceEstimate = estimators::VarianceEstimate<f64>;
pub type GroundTruth = oracle::GroundTruth<f64>;

pub type Dataset32 = data::Dataset<f32>;
pub type TrainedNet32 = net::TrainedNet<f32>;
pub type KrrModel32 = krr::KrrModel<f32>;
