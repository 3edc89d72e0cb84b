use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("token {token} at index {index} is outside vocabulary of size {vocab_size}")]
    VocabViolation {
        index: usize,
        token: u32,
        vocab_size: u32,
    },
    #[error("empty sequence")]
    EmptySequence,
    #[error("empty volume")]
    EmptyVolume,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid mask ratio {ratio} for length {len}: mask would hold {count} tokens")]
    InvalidRatio { ratio: f64, len: usize, count: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid context: target {target} is visible")]
    InvalidContext { target: usize },
    #[error("model assigned zero probability to the observed token at position {position}")]
    ZeroProbability { position: usize },
    #[error("non-finite loss at iteration {iter}")]
    NonFiniteLoss { iter: usize },
    #[error("non-finite gradient for parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("iteration {0} outside schedule range")]
    IterationOutOfRange(usize),
    #[error("singular system")]
    Singular,
    #[error("solver did not converge after {iters} iterations (best objective {best_objective})")]
    NonConvergence {
        iters: usize,
        best_objective: f64,
        best: Vec<f64>,
    },
    #[error("iterates diverged at step {step}")]
    Divergence { step: usize },
    #[error("distribution is not normalized (total mass {0})")]
    NotNormalized(f64),
    #[error("enumeration too large: {0}")]
    EnumerationTooLarge(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
