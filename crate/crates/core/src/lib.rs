//! Nonparametric empirical Bayes for heterogeneous-coefficient Gaussian panels.
//!
//! Units follow `y_it = a_i + b_i x2_it + u_it` with AR(1) or ARMA(1,1) errors
//! whose parameters vary across units. The cross-sectional distribution of
//! `(a, b, sigma2, rho[, phi])` is estimated by nonparametric maximum
//! likelihood with a Wasserstein-Fisher-Rao particle flow, and the fitted
//! prior drives posterior-mean estimates and one-step-ahead predictions.
//!
//! Module map:
//! - [`model`]: covariance families, exact likelihoods, scores, simulation.
//! - [`mixture`]: discrete priors, marginal likelihoods, posteriors, FOC gap.
//! - [`solvers`]: WFR flow, EM baseline, individual and subsample MLE.
//! - [`identification`]: annihilators and closed-form moment inversions.
//! - [`eb`]: posterior-mean decision rules and prediction.
//! - [`montecarlo`]: simulation designs, replication runner, aggregation.

// `!(x > lo)` style guards are kept so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eb;
pub mod error;
pub mod identification;
pub mod mixture;
pub mod model;
pub mod montecarlo;
pub mod parallel;
pub mod solvers;

pub use error::{Error, Result};
pub use mixture::{MixingDistribution, PosteriorMatrix, TargetFunctional};
pub use model::{
    CovarianceFamily, CovariateMode, PanelDataset, PanelUnit, Theta, ThetaBox,
};
pub use solvers::{FitResult, SolverConfig};
