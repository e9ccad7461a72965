use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length {0} is not a power of two; zero-pad before transforming")]
    NotPowerOfTwo(usize),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("signal has zero energy; ratio is undefined")]
    ZeroEnergy,
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("backward called on a non-scalar loss of shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph has already been consumed by a backward pass")]
    GraphConsumed,
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("checkpoint has bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint tensors do not match the model: {0}")]
    ShapeTable(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
