use thiserror::Error;

/// Errors raised by the modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("structural error: {0}")]
    Structural(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate spectrum: all eigenvalues are zero")]
    DegenerateSpectrum,
    #[error("modelling failed at {stage}: {msg}")]
    Modeling { stage: &'static str, msg: String },
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the input data rather than by the caller or the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Structural(_)
                | Error::Ingestion(_)
                | Error::InsufficientData { .. }
                | Error::Io(_)
        )
    }

    /// True for numerical breakdowns (singular systems, degenerate spectra, failed fits).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::DegenerateSpectrum | Error::Modeling { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
