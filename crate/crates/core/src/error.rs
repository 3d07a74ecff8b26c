use thiserror::Error;

/// Errors raised across the synthesis toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("expression is not symmetric in the decision variables (residual {0:.3e})")]
    NotSymmetric(f64),

    #[error("product of affine expressions is not affine (variable x variable term)")]
    NotAffine,

    #[error("structure violation: {0}")]
    Structure(String),

    #[error("algebraic loop among feedthrough terms")]
    AlgebraicLoop,

    #[error("wiring error: {0}")]
    Wiring(String),

    #[error("unbounded objective")]
    Unbounded,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("single-unknown inequality unsolvable: kernel condition violated on {side} (largest eigenvalue {eigenvalue:.3e})")]
    Unsolvable { side: &'static str, eigenvalue: f64 },

    #[error("controller reconstruction failed at step {step}: {reason}")]
    Reconstruction { step: usize, reason: String },

    #[error("regularity assumption violated: {0}")]
    Regularity(String),

    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
