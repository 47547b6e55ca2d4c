use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameters violate a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A query point lies outside the domain (inside the hole).
    #[error("point {point} lies outside the domain (boundary at {boundary})")]
    OutsideDomain { point: f64, boundary: f64 },

    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("time stepping became unstable at step {step} (t = {time}): {reason}")]
    Unstable { step: usize, time: f64, reason: String },

    #[error("eigenvalue solve failed: {0}")]
    Eigen(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("malformed snapshot line {line}: {message}")]
    Snapshot { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(line: usize, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: msg.into(),
        }
    }

    /// Whether this error came from the configuration rather than a computation.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config { .. } => true,
            Error::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

/// Attaches a pipeline stage name to errors.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
