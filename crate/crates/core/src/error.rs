use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("unknown name: {0}")]
    UnknownName(String),

    #[error("invalid model file: {0}")]
    ModelFormat(String),
}
