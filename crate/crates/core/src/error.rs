use crate::model::{Occupancy, Violation};

/// Errors produced by the analysis and simulation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("{what} did not converge (residual {residual:.3e})")]
    NonConvergence {
        what: String,
        residual: f64,
        last: Option<Box<Occupancy>>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
