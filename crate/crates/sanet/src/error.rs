use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents (bad magic number, truncated payload, ...).
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// Two inputs that must agree do not (image/label counts, label lengths).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Degenerate or empty input data.
    #[error("input error: {0}")]
    Input(String),

    /// A parameter or combination of parameters is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A matrix handed to a routine violates its contract (e.g. not symmetric).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("vertices with zero degree: {indices:?}")]
    IsolatedVertices { indices: Vec<usize> },

    #[error("point {index} has zero local scale (duplicate points within its {k_local} nearest neighbors)")]
    DegenerateScale { index: usize, k_local: usize },

    #[error("eigensolver did not converge after {iterations} iterations ({converged}/{wanted} pairs, worst residual {residual:.3e})")]
    Convergence {
        iterations: usize,
        converged: usize,
        wanted: usize,
        residual: f64,
    },

    /// A configured computation would exceed the desk-scale resource limits.
    #[error("guardrail: {0}")]
    Guardrail(String),

    /// Adds the pipeline location an inner error came from.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
