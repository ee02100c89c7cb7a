//! Numerical library for McKean-Vlasov SDEs whose coefficients depend on the
//! law of the solution at a future time t+δ, together with the control
//! machinery built on top of them:
//!
//! - [`measure`] — empirical measures, 1-D 2-Wasserstein distance, Lions
//!   derivatives of statistic-form measure functionals;
//! - [`problems`] — coefficient bundles with derivatives, validation, and
//!   built-in benchmark problems;
//! - [`forward`] — interacting-particle Euler-Maruyama simulation via a
//!   Picard fixed point in a weighted norm, with contraction diagnostics;
//! - [`variational`] — the linear SDE for the Gâteaux derivative of the state
//!   with respect to a control perturbation, plus difference-quotient checks;
//! - [`adjoint`] — the delayed adjoint BSDE with implicit terminal condition,
//!   solved by an outer fixed point around a regression-based backward sweep;
//! - [`optimizer`] — Hamiltonian evaluation, cost estimation, first-order
//!   optimality reports, and projected-gradient control optimization;
//! - [`export`] — deterministic CSV/JSON artifact writers.
//!
//! All randomness is derived from explicit seeds with one counter-based
//! stream per particle, so results are reproducible and independent of the
//! worker-thread count.

pub mod adjoint;
pub mod error;
pub mod export;
pub mod forward;
pub mod lsmc;
pub mod measure;
pub mod optimizer;
pub mod problems;
pub mod variational;

pub use error::{Error, Result};
