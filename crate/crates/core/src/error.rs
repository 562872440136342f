use std::path::PathBuf;

/// Errors raised by the esmc library.
#[derive(Debug, thiserror::Error)]
pub enum EsmcError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A symmetric factorization failed even at the largest jitter tried.
    #[error(
        "numerical failure in {context}: matrix not positive definite (last jitter {jitter:e})"
    )]
    Numerical { context: String, jitter: f64 },

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error in field `{field}`: {message}")]
    Format { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EsmcError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EsmcError::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        EsmcError::DegenerateInput(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, msg: impl Into<String>) -> Self {
        EsmcError::Format {
            field: field.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EsmcError::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes the context of a numerical error, leaving other kinds untouched.
    pub fn with_context(self, outer: &str) -> Self {
        match self {
            EsmcError::Numerical { context, jitter } => EsmcError::Numerical {
                context: format!("{outer}: {context}"),
                jitter,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, EsmcError>;
