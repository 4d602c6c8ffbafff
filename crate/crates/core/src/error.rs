//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by lattice construction, operator algebra, spectral
/// analysis, and model parsing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice error: {0}")]
    Lattice(String),

    #[error("brick error: {0}")]
    Brick(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("operator error: {0}")]
    Operator(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("chain error: {0}")]
    Chain(String),

    #[error("spectral error: {0}")]
    Spectral(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("descent error: {0}")]
    Descent(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("model error at line {line}, column {column}: {message}")]
    ModelAt {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dense realization over {dim} dimensions exceeds cap {cap}")]
    DenseCap { dim: usize, cap: usize },

    #[error("residual {residual:e} exceeds tolerance {tolerance:e} in {context}")]
    Tolerance {
        context: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
