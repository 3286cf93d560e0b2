use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl core::fmt::Debug,
        got: impl core::fmt::Debug,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: alloc::format!("{expected:?}"),
            got: alloc::format!("{got:?}"),
        }
    }
}
