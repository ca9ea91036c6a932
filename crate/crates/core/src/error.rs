use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("[{stage}] {msg}")]
    Numerical { stage: &'static str, msg: String },
    #[error("solvability violated: (g,Q) = {0:.3e}")]
    Solvability(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub fn numerical(stage: &'static str, msg: impl Into<String>) -> Self {
        LabError::Numerical { stage, msg: msg.into() }
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Invalid(_) | LabError::GridMismatch => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Invalid(msg.into()))
}
