use thiserror::Error;

/// Errors surfaced by the library crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An input violates a documented precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// An input is valid in shape but numerically degenerate (e.g. near-zero norm).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Bad configuration value or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Scene generation could not satisfy placement constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// A serialized file failed to parse.
    #[error("parse error in {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// Checkpoint load failure (version, checksum, truncation).
    #[error("checkpoint load error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
