use thiserror::Error;

use crate::shs::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),

    /// The linear system is rank deficient or too badly conditioned to trust.
    #[error("singular {system} system (condition estimate {condition:e})")]
    SingularSystem { system: &'static str, condition: f64 },

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}
