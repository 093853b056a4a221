//! Error taxonomy shared by every module.
//!
//! The variants map onto the failure classes the public operations promise:
//! shape mismatches, numeric domain violations, broken call contracts, and
//! malformed files. The CLI maps them onto process exit codes in `main`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform to the operation's shape rule.
    #[error("{op}: dimension mismatch: {lhs} vs {rhs}")]
    Dimension { op: String, lhs: String, rhs: String },

    /// Numerically invalid input (non-finite values, empty domains).
    #[error("domain error: {0}")]
    Domain(String),

    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A binary file failed to parse; `offset` is the byte position.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// File carries a version byte this build does not understand.
    #[error("unsupported format version {found:#04x} (expected {expected:#04x})")]
    UnsupportedVersion { found: u8, expected: u8 },

    /// Training produced a non-finite loss and was aborted.
    #[error("numerical abort: {0}")]
    Numeric(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(op: &str, lhs: impl std::fmt::Debug, rhs: impl std::fmt::Debug) -> Self {
        Error::Dimension {
            op: op.to_string(),
            lhs: format!("{lhs:?}"),
            rhs: format!("{rhs:?}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
