use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not compose for the requested operation.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A value-level precondition failed (ranges, lengths, probabilities).
    #[error("invalid argument to {op}: {detail}")]
    Argument { op: &'static str, detail: String },

    /// Malformed input data (CSV, cache, checkpoint).
    #[error("format error{}: {detail}", .location.as_ref().map(|l| format!(" at {l}")).unwrap_or_default())]
    Format {
        detail: String,
        location: Option<String>,
    },

    /// An internal invariant was violated; indicates a bug, not bad input.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn argument(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Argument {
            op,
            detail: detail.into(),
        }
    }

    pub fn format(detail: impl Into<String>) -> Self {
        Error::Format {
            detail: detail.into(),
            location: None,
        }
    }

    pub fn format_at(detail: impl Into<String>, location: impl Into<String>) -> Self {
        Error::Format {
            detail: detail.into(),
            location: Some(location.into()),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
