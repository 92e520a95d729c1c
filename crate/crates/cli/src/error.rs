use tailforge_core::error::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(CoreError),

    #[error("state mismatch: {0}")]
    State(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Hypothesis(_) => 2,
            CliError::State(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::ModelMismatch { .. } | CoreError::PoolFile(_) => CliError::State(e.to_string()),
            CoreError::InvalidModel(_) | CoreError::InvalidArgument(_) | CoreError::UnsupportedFamily(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Hypothesis(e),
        }
    }
}
