use alloc::string::String;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch on {axis}: expected {expected}, got {actual}")]
    ShapeMismatch {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("extent {extent} on axis {axis} is not divisible by {divisor}")]
    NotDivisible {
        axis: &'static str,
        extent: usize,
        divisor: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("batch norm running statistics have not been accumulated")]
    MissingRunningStats,
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = core::result::Result<T, Error>;
