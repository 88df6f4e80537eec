use thiserror::Error;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("unsupported primitive `{0}`")]
    UnsupportedOp(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {norms}")]
    Diverged {
        epoch: usize,
        batch: usize,
        norms: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
