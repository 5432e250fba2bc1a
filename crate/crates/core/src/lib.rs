//! Estimation and inference for network effects with focally sparse
//! deviations from a pre-specified adjacency structure.
//!
//! The pipeline is a double-regularized GMM: an l1-minimizing moment
//! estimator solved by linear programming, a constrained l1 approximate
//! inverse for the score covariance, a Neyman-orthogonal debiasing step,
//! and simultaneous inference via Gaussian approximation or a block
//! multiplier bootstrap. A seeded Monte Carlo harness reproduces the
//! benchmark tables, and a diagnostics module checks design-matrix
//! conditions by exhaustive subset enumeration at desk scale.

pub mod clime;
pub mod debias;
pub mod dgp;
pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod io;
pub mod lp;
pub mod model;
pub mod pipeline;
pub mod rmd;
pub mod rng;
pub mod split;

pub use error::{Error, Result};
