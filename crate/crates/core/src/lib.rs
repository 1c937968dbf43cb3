//! Single-loop stochastic solvers for non-smooth weakly-convex coupled
//! compositional optimization, with variance-reduced block estimators,
//! Moreau-envelope convergence diagnostics, and built-in applications
//! (two-way partial AUC maximization, group distributionally robust
//! optimization).

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod gdro;
pub mod linalg;
pub mod problem;
pub mod rng;
pub mod scalar;
pub mod solvers;
pub mod tpauc;
pub mod trace;

pub use config::SolverConfig;
pub use error::{CcoError, Result};
pub use linalg::{Jacobian, ParamVector};
pub use problem::{FccoProblem, TccoProblem};
pub use scalar::Scalar;
pub use trace::{RunTrace, TraceRow};

/// Default scalar type for applications and the CLI.
pub type DefaultScalar = f64;
/// Parameter vector over the default scalar.
pub type Vector = ParamVector<DefaultScalar>;
/// Solver configuration over the default scalar.
pub type Config = SolverConfig<DefaultScalar>;
