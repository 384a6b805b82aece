use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("degenerate batch in {0}: batch norm in train mode needs N*H*W > 1")]
    DegenerateBatch(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(
    op: &'static str,
    expected: impl core::fmt::Display,
    actual: impl core::fmt::Display,
) -> Error {
    use alloc::string::ToString;
    Error::Shape {
        op,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
