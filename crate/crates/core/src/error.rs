use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the model evaluators, block solvers and orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid conic problem: {0}")]
    InvalidProblem(String),

    #[error("division by zero: {0}")]
    DivideByZero(String),

    #[error("constraint violated: {0}")]
    ConstraintViolation(String),

    #[error("infeasible latency term: {0}")]
    InfeasibleLatency(String),

    #[error("structurally infeasible subproblem: {0}")]
    InfeasibleStructure(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
