use std::path::PathBuf;

/// Errors produced while loading, solving or certifying a problem.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{path}:{line}: unknown anchor id `{id}`")]
    UnknownAnchor { path: PathBuf, line: u64, id: String },

    #[error("timestamps must be strictly increasing (index {index}: {prev} then {next})")]
    Ordering { index: usize, prev: f64, next: f64 },

    #[error("anchor {anchor} measured twice at time index {time_index}")]
    DuplicateMeasurement { time_index: usize, anchor: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The Gauss-Newton normal matrix is not positive definite.
    #[error("normal matrix is rank deficient at time index {block} (add a motion prior or more measurements)")]
    RankDeficient { block: usize },

    #[error("matrix of size {size} exceeds the dense limit {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("estimate diverged; refusing to certify")]
    Diverged,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
