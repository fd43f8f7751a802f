//! Underapproximative stochastic reachability of target tubes for linear
//! time-varying systems with Gaussian disturbances.
//!
//! The crate computes polytopic inner approximations of the set of initial
//! states from which an open-loop input sequence keeps the state inside a
//! time-varying sequence of polytopes with probability at least `alpha`.
//! It also provides the grid dynamic-programming baseline, Minkowski-sum
//! interpolation between probability levels, Monte-Carlo validation and a
//! quasi-Monte-Carlo Gaussian integration backend.

pub mod chance;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod lpsolve;
pub mod montecarlo;
pub mod reachalgo;
pub mod sysmodel;

pub use error::{Error, Result};

/// Default absolute tolerance used on half-space residuals.
pub const DEFAULT_TOL: f64 = 1e-9;
