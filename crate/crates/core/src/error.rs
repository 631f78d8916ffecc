use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structure(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("index {index} out of range for universe of size {size}")]
    Index { index: usize, size: usize },

    #[error("infeasible: pair ({i}, {j}) has zero budget but query coefficients differ")]
    Infeasible { i: usize, j: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("candidate set of {count} histograms exceeds cap {cap}; raise alpha or shrink the universe")]
    CandidateCap { count: u128, cap: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
