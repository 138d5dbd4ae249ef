use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data failed validation; each entry names an offending row or field.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// Matrix or vector shapes disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Newton inversion of the link did not reach tolerance.
    #[error("link inversion did not converge after {iterations} iterations (residual {residual:.3e})")]
    Inversion { iterations: usize, residual: f64 },

    /// No grid point produced any draw satisfying the constraints.
    #[error("importance tuning failed: {0}")]
    Tuning(String),

    /// A proportion estimate was zero, so the Bayes factor is unbounded.
    #[error("unbounded estimate: no accepted draws on the {side} side ({detail})")]
    Unbounded { side: String, detail: String },

    /// A model or manifest could not be interpreted.
    #[error("invalid model definition: {0}")]
    Spec(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::Spec(msg.into())
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by the estimator.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Inversion { .. } | Error::Tuning(_) | Error::Unbounded { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
