use thiserror::Error;

/// Crate-wide error type. The CLI maps categories onto exit codes
/// (usage/config = 2, data = 3, numerical = 4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("softmax over empty support: every entry is masked")]
    EmptySupport,
    #[error("empty sequence")]
    EmptySequence,
    #[error("degenerate vector at position {0}: zero norm, cosine undefined")]
    DegenerateVector(usize),
    #[error("degenerate column {0}: all-zero mass, cannot renormalize")]
    DegenerateColumn(usize),
    #[error("sinkhorn kernel conditioning failure: {0}; use a larger mu or retry in the log domain")]
    Conditioning(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("statistics error: {0}")]
    Statistics(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
