use std::path::PathBuf;

use thiserror::Error;

/// Contract violations and invalid inputs raised by the algorithmic modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),
    #[error("chromosome has {actual} bits, space expects {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("value {value} in dimension {dim} is not finite")]
    NonFinite { dim: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{0} is outside the search domain")]
    OutOfDomain(String),
    #[error("unknown benchmark function `{0}`")]
    UnknownBenchmark(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure of a single cost evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("evaluator timed out after {0:.3}s")]
    Timeout(f64),
    #[error("malformed evaluator response: {0:?}")]
    Malformed(String),
    #[error("response index {got} does not match request index {expected}")]
    IndexMismatch { expected: u64, got: u64 },
    #[error("evaluator reported an error for evaluation {index}: {message}")]
    Reported { index: u64, message: String },
    #[error("evaluator process failed: {0}")]
    Process(String),
    #[error("candidate rejected: {0}")]
    Rejected(String),
}

/// Errors from checkpoint encoding and decoding.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupted checkpoint: {0}")]
    Corrupted(String),
    #[error("checkpoint i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Errors surfaced by the optimisation driver.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("evaluation {index} failed: {source}{}", resume_hint(.checkpoint))]
    Evaluation {
        index: u64,
        #[source]
        source: EvalError,
        checkpoint: Option<PathBuf>,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

fn resume_hint(checkpoint: &Option<PathBuf>) -> String {
    match checkpoint {
        Some(p) => format!(" (resume with checkpoint {})", p.display()),
        None => String::new(),
    }
}
