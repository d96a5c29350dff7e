use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A response value at or above 0 dB cannot be mapped to a finite decay time.
    #[error("non-decaying response at index {index}: {value_db} dB")]
    NonDecaying { index: usize, value_db: f64 },

    #[error("numerical failure in parameter {index}")]
    NumericalFailure { index: usize },

    #[error("fit diverged at iteration {iteration}: {source}")]
    Divergence {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("render became unstable at sample {sample}")]
    Instability { sample: usize },

    #[error("energy decay curve spans only {span_db:.1} dB, need {required_db:.1} dB")]
    InsufficientDecay { span_db: f64, required_db: f64 },

    #[error("campaign aborted: {failed} of {total} fits failed")]
    CampaignAborted { failed: usize, total: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
