use std::fmt;

use polarfuse_core::Error;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;

/// A failed run: process exit code plus the message printed to stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    /// Any error raised while reading `what` is bad input.
    pub fn reading(what: impl fmt::Display) -> impl FnOnce(Error) -> Failure {
        move |e| Failure::input(format!("{what}: {e}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            Error::NonFinite(_) | Error::EmptyMask | Error::Degenerate(_) | Error::Domain(_) | Error::MissingCache => {
                EXIT_NUMERIC
            }
            Error::Format { .. }
            | Error::DimMismatch { .. }
            | Error::MissingParam(_)
            | Error::Duplicate(_)
            | Error::Io(_)
            | Error::Csv(_) => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::input(e.to_string())
    }
}
