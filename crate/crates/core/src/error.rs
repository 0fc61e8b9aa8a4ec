use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by the placement core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("graph has {n} nodes but positional capacity is {max}")]
    Capacity { n: usize, max: usize },
    #[error("value outside numerical domain: {0}")]
    Domain(String),
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
