//! Crate-wide error type.

/// Errors produced anywhere in the toolkit.
///
/// Every variant maps to a stable category string used by the CLI for its
/// one-line machine-parseable failure output.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A numeric argument outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid data content (NaN, empty input, malformed cell).
    #[error("data error: {0}")]
    Data(String),

    /// Inconsistent or unsatisfiable configuration.
    #[error("config error: {0}")]
    Config(String),

    /// API misuse (non-scalar backward root, consumed graph, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Timestamp or numeric field that could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// CSV ingestion failure, with the 1-based file line.
    #[error("ingestion error at line {line}: {message}")]
    Ingestion { line: usize, message: String },

    /// Malformed, truncated, or incompatible checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training aborted because the loss became non-finite.
    #[error("divergence: loss is not finite at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    /// Underlying I/O failure.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable category slug for machine-readable CLI output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Domain(_) => "domain",
            Error::Data(_) => "data",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Parse(_) => "parse",
            Error::Ingestion { .. } => "data",
            Error::Checkpoint(_) => "checkpoint",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
