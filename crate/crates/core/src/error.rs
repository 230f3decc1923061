//! Error taxonomy shared by every stage of the pipeline.
//!
//! The CLI maps these categories onto exit codes, so each variant carries
//! the failure class, not just a message.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or lengths do not line up (conv channel mismatch, wrong
    /// feature-vector length, ...).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Caller passed an invalid value (bad label index, n too small, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// An upstream artifact or piece of state is missing.
    #[error("state error: {0}")]
    State(String),

    /// Input data is unreadable or semantically invalid.
    #[error("data error: {0}")]
    Data(String),

    /// A persisted artifact has the wrong magic, version, or layout.
    #[error("format error: {0}")]
    Format(String),

    /// A numeric contract was violated (NaN input, non-finite features).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A built network deviates from its architectural contract.
    #[error("construction error: {0}")]
    Construction(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
