//! Stochastic approximation with implicit (proximal) updates.
//!
//! The crate provides the classic Robbins-Monro procedure together with its
//! implicit counterpart, in which each iterate is defined through a
//! fixed-point equation `theta_bar = theta_prev - gamma_n * h(theta_bar)`.
//! Because the regression function `h` is usually unknown, the implicit step
//! is approximated by one of three algorithms: an inner Robbins-Monro run,
//! a one-dimensional shrinkage fixed point, or a grid search over shrinkage
//! values driven by model simulations.
//!
//! On top of the procedure engine sit concrete estimation problems
//! ([`models`]), assembled estimators ([`estimators`]), Monte Carlo
//! diagnostics for convergence rates, stability, and asymptotic normality
//! ([`diagnostics`]), and a batch experiment driver ([`experiments`]) used by
//! the `sa` binary.

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod models;
pub mod oracle;
pub mod procedure;
pub mod rng;
pub mod schedule;
pub mod solvers;

pub use error::SaError;
pub use oracle::StochasticOracle;
pub use procedure::{ideal_implicit_step, rm_step, run_procedure, Mode, ProcedureConfig, Trace};
pub use rng::RngStream;
pub use schedule::LearningRate;
