//! Differentially private functional principal component analysis.
//!
//! The private release is a draw from the exponential mechanism with utility
//! `Σ‖PX_i‖²` and a Gaussian-span base measure. In basis coordinates this is
//! a matrix Bingham distribution on the Stiefel manifold, sampled here by a
//! column-wise Gibbs scheme with exact vector-Bingham updates.
//!
//! Modules, bottom-up:
//! - [`hilbert`]: grids, curves, quadrature inner products, bases.
//! - [`covariance`]: base-measure covariance operators in basis coordinates.
//! - [`mechanism`]: generic exponential mechanism and exact quadratic sampler.
//! - [`bingham`]: matrix Bingham Gibbs sampler and quadrature oracles.
//! - [`fpca`]: private FPCA and utility metrics.
//! - [`clt`]: empirical checks of the mechanism's asymptotic normality.
//! - [`harness`]: simulation, ingestion, scenario grids and configuration.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bingham;
pub mod clt;
pub mod covariance;
pub mod error;
pub mod fpca;
pub mod harness;
pub mod hilbert;
pub mod linalg;
pub mod mechanism;
pub mod rng;

pub use error::{Error, Result};
