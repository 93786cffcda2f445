use thiserror::Error;

/// Error type shared by every module of the crate.
///
/// The variants are grouped by who is at fault: `Config` for bad run
/// configuration, `Data` for malformed or inconsistent input data, `Contract`
/// for library calls that violate an operation's preconditions, `TooLarge`
/// for state spaces beyond the supported size, and `Invariant` for internal
/// consistency failures that indicate a bug.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("state space too large: {0}")]
    TooLarge(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
