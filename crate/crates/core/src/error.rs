//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by construction, simulation, and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A dimension, index, or argument combination is invalid.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix fails a structural check (unitarity, hermiticity, diagonality).
    #[error("matrix check failed: {0}")]
    MatrixCheck(String),

    /// An iterative routine did not reach its tolerance within its budget.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// A fit or reconstruction is underdetermined or ill-conditioned.
    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    /// A requested gate construction has no solution for the given parameters.
    #[error("no solution: {0}")]
    NoSolution(String),

    /// Configuration file or interchange data could not be used.
    #[error("config error: {0}")]
    Config(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Machine-readable kind tag used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::MatrixCheck(_) => "matrix_check",
            Error::NoConvergence(_) => "no_convergence",
            Error::IllPosed(_) => "ill_posed",
            Error::NoSolution(_) => "no_solution",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 1 for validation problems, 2 for numerical ones.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::MatrixCheck(_)
            | Error::NoConvergence(_)
            | Error::IllPosed(_)
            | Error::NoSolution(_) => 2,
            _ => 1,
        }
    }
}
