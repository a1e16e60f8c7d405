use std::io;

/// Failure of a CLI run; each variant maps onto a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical blow-up: {0}")]
    BlowUp(String),
    #[error("stability refusal: {0}")]
    Stability(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::BlowUp(_) => 3,
            CliError::Stability(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<opdyn::Error> for CliError {
    fn from(e: opdyn::Error) -> Self {
        match e {
            opdyn::Error::Config(_) | opdyn::Error::Shape(_) => CliError::Config(e.to_string()),
            opdyn::Error::BlowUp { .. } | opdyn::Error::DensityGrowth { .. } => CliError::BlowUp(e.to_string()),
            opdyn::Error::Unstable { .. } => CliError::Stability(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
