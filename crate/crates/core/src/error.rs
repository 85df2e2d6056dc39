use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, axes or divisibility do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A scalar argument is out of its allowed range.
    #[error("argument error: {0}")]
    Argument(String),
    /// A documented precondition of an operation was violated.
    #[error("contract error: {0}")]
    Contract(String),
    #[error("numeric error at coordinate {index}: {message}")]
    Numeric { index: usize, message: String },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}

macro_rules! arg_err {
    ($($arg:tt)*) => { $crate::error::Error::Argument(format!($($arg)*)) };
}

macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::error::Error::Contract(format!($($arg)*)) };
}

pub(crate) use {arg_err, contract_err, dim_err};
