use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: {left} vs {right} intervals")]
    GridMismatch { left: usize, right: usize },

    #[error("step range {from}..{to} is outside a disorder of {n_steps} steps")]
    StepRange {
        from: usize,
        to: usize,
        n_steps: usize,
    },

    #[error("degenerate propagator: total mass {0:e}")]
    DegeneratePropagator(f64),

    #[error("winding truncation leaked {leak:e} of the mass (budget {budget:e})")]
    Truncation { leak: f64, budget: f64 },

    #[error("conditioning mass {0:e} is below the floor")]
    DegenerateConditioning(f64),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("cannot merge estimates: {0}")]
    MergeMismatch(String),

    #[error("config line {line}: key `{key}`: {reason}")]
    Config {
        line: usize,
        key: String,
        reason: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("manifest serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
