//! Numerical laboratory for stochastic homogenization of viscous
//! Hamilton-Jacobi equations.
//!
//! The crate computes effective Hamiltonians of equations of the form
//!
//! ```text
//! -tr(A(y) D²w) + H(Dw, y) = mu
//! ```
//!
//! in random media via the metric problem (maximal subsolutions vanishing
//! on a source set), and runs seeded Monte Carlo campaigns that measure
//! localization, subadditivity, fluctuation/bias scaling, corrector error
//! and space-time homogenization error at desk scale.
//!
//! Entry points:
//! - [`environment`]: random coefficient fields `(Sigma, H)` with dependence
//!   range at most one,
//! - [`scheme`]: the monotone upwind discretization and stationary solver,
//! - [`metric`]: maximal subsolutions, sublevel fronts and their diagnostics,
//! - [`effective`]: directional front speeds, the effective Hamiltonian and
//!   the planar convex-geometry toolkit,
//! - [`cell`] and [`evolution`]: the approximate cell problem and the
//!   epsilon-scaled time-dependent problem,
//! - [`experiments`]: replayable Monte Carlo campaigns,
//! - [`cli`]: the command-line driver.

pub mod cell;
pub mod cli;
pub mod config;
pub mod effective;
pub mod environment;
pub mod evolution;
pub mod experiments;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metric;
pub mod rng;
pub mod scheme;
pub mod stats;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum HjError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("solver did not converge after {sweeps} sweeps (last residual {residual:.3e}, tol {tol:.3e})")]
    NonConvergence {
        sweeps: usize,
        residual: f64,
        tol: f64,
    },
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("containment hypothesis violated: {0}")]
    Containment(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("statistics error: {0}")]
    Stats(String),
    #[error("monte carlo failure: {0}")]
    MonteCarlo(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, HjError>;
