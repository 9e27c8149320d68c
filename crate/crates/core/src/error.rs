use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not positive definite (jitter up to {0:e} failed)")]
    NotPositiveDefinite(f64),
    #[error("loss is not a scalar: {0}x{1}")]
    NotScalar(usize, usize),
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("optimization diverged: {0}")]
    Diverged(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::NotPositiveDefinite(_) | Error::Diverged(_)
        )
    }
}
