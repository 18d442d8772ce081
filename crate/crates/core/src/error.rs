use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnpError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid model: {0}")]
    Validation(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("mass mismatch for species {species}: defect {defect:e}")]
    MassMismatch { species: usize, defect: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("solver failure at step {step}: {reason}")]
    Solver { step: usize, reason: String },

    #[error("alignment failure: {0}")]
    Alignment(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PnpError>;

impl PnpError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        PnpError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
