use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid factor `{name}`: {reason}")]
    InvalidFactor { name: String, reason: String },

    #[error("invalid design space: {0}")]
    InvalidSpace(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("emax denominator x + ed50 vanishes at x = {x}")]
    EmaxPole { x: f64 },

    #[error("covariance matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The information matrix is singular (or numerically so); the loss is +inf.
    #[error("singular information matrix")]
    SingularInformation,

    #[error("weights are not strictly inside the simplex")]
    Infeasible,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid solver options: {0}")]
    InvalidOptions(String),

    #[error("symmetry condition fails: {0}")]
    Symmetry(String),

    #[error("cannot round to {runs} runs: the design has {support} support points, so at least {support} runs are needed")]
    TooFewRuns { runs: usize, support: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
