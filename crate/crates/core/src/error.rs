use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected:?}, found {found:?}")]
    DimMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Geometry with no well-defined answer (parallel vectors and the like).
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("malformed {format} data at field `{field}`: {detail}")]
    Format {
        format: &'static str,
        field: &'static str,
        detail: String,
    },

    #[error("no valid pixels in mask")]
    EmptyMask,

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("duplicate entry `{0}`")]
    Duplicate(String),

    #[error("backward called without a forward cache")]
    MissingCache,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: &[usize], found: &[usize]) -> Self {
        Error::DimMismatch {
            context,
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    pub(crate) fn format(format: &'static str, field: &'static str, detail: impl fmt::Display) -> Self {
        Error::Format {
            format,
            field,
            detail: detail.to_string(),
        }
    }
}
