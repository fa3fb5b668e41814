use thiserror::Error;

/// Errors raised by the convolution back-ends.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConvError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The indirection buffer was built for a different input, zero row or
    /// geometry than the one supplied at call time.
    #[error("stale indirection buffer: {0}")]
    StaleBuffer(String),

    #[error("batch cannot shrink from {from} to {to} through growth; use truncate_batch")]
    BatchShrink { from: usize, to: usize },
}

pub type Result<T> = std::result::Result<T, ConvError>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::ConvError::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
