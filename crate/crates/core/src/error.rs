use thiserror::Error;

/// Errors produced by the solvers and measure primitives.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sample-count mismatch: {left} vs {right}")]
    SampleCountMismatch { left: usize, right: usize },

    #[error("empty sample set")]
    EmptySamples,

    #[error("non-finite sample value at index {index}")]
    NonFiniteSample { index: usize },

    #[error("non-finite statistic")]
    NonFiniteStatistic,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("delta must be an integer multiple of dt")]
    DeltaNotGridMultiple,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value from coefficient `{name}` at t={t}, x={x}, u={u}")]
    NonFiniteCoefficient { name: &'static str, t: f64, x: f64, u: f64 },

    #[error("non-finite state for particle {particle} at step {step}")]
    NonFiniteState { particle: usize, step: usize },

    #[error("Picard divergence — check δ ≤ 1/(7C)")]
    PicardDivergence,

    #[error("adjoint fixed-point divergence — check δ against the backward contraction bound")]
    BsdeDivergence,

    #[error("no convergence after {iterations} iterations, residual {residual}")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("Brownian increment sanity check failed: {0}")]
    NoiseSanity(String),

    #[error("unknown builtin `{name}`; available: {available}")]
    UnknownBuiltin { name: String, available: String },
}

pub type Result<T> = std::result::Result<T, Error>;
