use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed for `{clause}`: {message}")]
    Validation { clause: String, message: String },

    #[error(
        "adaptive quadrature did not converge: value {value:e}, error estimate {error:e} after {intervals} intervals"
    )]
    Quadrature { value: f64, error: f64, intervals: usize },

    #[error("density tail with exponent {exponent} is not integrable (needs > 3)")]
    DivergentTail { exponent: f64 },

    #[error("Picard iteration did not converge in {} iterations; residuals {residuals:?}", residuals.len())]
    NonConvergence { residuals: Vec<f64> },

    #[error("exponent selection infeasible for q = {q}: lower {lower} >= upper {upper}")]
    InfeasibleExponents { q: f64, lower: f64, upper: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing {what} in {}", dir.display())]
    MissingOutput { what: String, dir: PathBuf },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error class, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. } | Error::Validation { .. } | Error::InvalidArgument(_) => ErrorClass::Validation,
            Error::Quadrature { .. }
            | Error::DivergentTail { .. }
            | Error::NonConvergence { .. }
            | Error::InfeasibleExponents { .. } => ErrorClass::Numerical,
            Error::MissingOutput { .. } | Error::Io { .. } | Error::Csv(_) | Error::Json(_) => ErrorClass::Io,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Validation => 2,
            ErrorClass::Numerical => 3,
            ErrorClass::Io => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(clause: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            clause: clause.into(),
            message: message.into(),
        }
    }
}
