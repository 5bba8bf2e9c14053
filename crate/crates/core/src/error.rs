use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix: {0}")]
    Singular(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<S: Into<String>>(msg: S) -> Error {
    Error::DimensionMismatch(msg.into())
}

pub(crate) fn arg_err<S: Into<String>>(msg: S) -> Error {
    Error::InvalidArgument(msg.into())
}
