use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// Caller-supplied data violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),
    /// Internal shape or length mismatch between engine-owned values.
    #[error("internal error: {0}")]
    Internal(String),
    /// The requested quantity is not defined for the given arguments.
    #[error("undefined: {0}")]
    Undefined(String),
}
