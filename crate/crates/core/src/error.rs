use std::io;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("empty vocabulary: no code reaches min_count {min_count}")]
    EmptyVocabulary { min_count: u64 },
    #[error("sequence of length {len} is shorter than filter size {filter}")]
    Geometry { len: usize, filter: usize },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coarse error categories, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or unreadable/malformed input.
    Input,
    /// Well-formed input that cannot support the requested computation.
    Data,
    /// Divergence or non-finite values during optimization.
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. } | Error::Config(_) | Error::Format(_) | Error::Io(_) => {
                ErrorKind::Input
            }
            Error::Data(_) | Error::EmptyVocabulary { .. } | Error::Geometry { .. } => {
                ErrorKind::Data
            }
            Error::Numeric(_) => ErrorKind::Numeric,
        }
    }

    /// Prefixes the message with `ctx`, keeping the error kind.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Parse { line, message } => Error::Parse { line, message: format!("{ctx}: {message}") },
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Format(m) => Error::Format(format!("{ctx}: {m}")),
            Error::Data(m) => Error::Data(format!("{ctx}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
            Error::Io(e) => Error::Io(io::Error::new(e.kind(), format!("{ctx}: {e}"))),
            other => other,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
