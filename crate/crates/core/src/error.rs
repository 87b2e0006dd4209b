use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// Shape mismatch in a linear-algebra or network operation.
    #[error("dimension mismatch in {op}: left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    Dim {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// Malformed input file (IDX, CIFAR binary, ...), with the byte offset
    /// at which parsing failed.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    /// Invalid configuration rejected before any compute.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset-level problem (missing classes, label out of range, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Operation requires state that has not been produced yet.
    #[error("state error: {0}")]
    State(String),

    /// Downloaded file failed checksum verification.
    #[error("integrity error for {path}: expected sha256 {expected}, got {actual}")]
    Integrity {
        path: String,
        expected: String,
        actual: String,
    },

    /// Network-level download failure.
    #[error("transport error: {0}")]
    Transport(String),

    /// Malformed checkpoint or feature file.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    /// Index outside the valid range.
    #[error("{what} index {index} out of range (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// Non-finite value encountered mid-computation; carries diagnostics.
    #[error("numeric abort: {0}")]
    Numeric(String),

    /// Analysis preconditions not met (degenerate spectrum, empty selection, ...).
    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Dim {
            op,
            lhs_rows: lhs.0,
            lhs_cols: lhs.1,
            rhs_rows: rhs.0,
            rhs_cols: rhs.1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
