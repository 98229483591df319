use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Nn(#[from] travgrid_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{what}: bad file format: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> CoreError {
    CoreError::Invalid(msg.into())
}
