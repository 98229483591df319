use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("backward requires a 1x1 loss, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
