use thiserror::Error;

use crate::solver::LossBreakdown;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Zernike mode (n={n}, m={m}): {reason}")]
    InvalidMode { n: i64, m: i64, reason: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("phantom generation failed: {0}")]
    Generation(String),

    #[error("training failed at iteration {iteration}: {message}")]
    Training {
        iteration: usize,
        message: String,
        trace: Vec<LossBreakdown>,
    },

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("tiff: {0}")]
    Tiff(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<tiff::TiffError> for Error {
    fn from(e: tiff::TiffError) -> Self {
        Error::Tiff(e.to_string())
    }
}
