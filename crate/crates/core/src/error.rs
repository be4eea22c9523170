use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical procedure stopped before reaching its tolerance. `estimate`
    /// is the best error estimate achieved.
    #[error("{what} did not converge (achieved error estimate {estimate:e})")]
    NonConvergence { what: String, estimate: f64 },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("series diverges: {0}")]
    Divergent(String),

    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("ellipticity violated: {0}")]
    Ellipticity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn no_conv(what: impl Into<String>, estimate: f64) -> Self {
        Error::NonConvergence { what: what.into(), estimate }
    }
}
