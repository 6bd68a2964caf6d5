use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(#[from] hqc_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl LabError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type LabResult<T> = std::result::Result<T, LabError>;
