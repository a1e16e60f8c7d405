use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("non-finite state at step {step}")]
    BlowUp { step: usize },

    #[error("time step {dt} exceeds explicit stability bound {bound}")]
    Unstable { dt: f64, bound: f64 },

    #[error("density growth beyond limit at step {step} (max {max}, initial max {initial})")]
    DensityGrowth { step: usize, max: f64, initial: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
