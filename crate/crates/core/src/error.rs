use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected {expected:?}, got {actual:?}")]
    Shape {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    Tensor(String),
    #[error("stale activation cache: {0}")]
    StaleCache(String),
    #[error("label {label} out of range for {classes} classes (sample {sample})")]
    Label {
        sample: usize,
        label: usize,
        classes: usize,
    },
    #[error("invalid model profile: {0}")]
    Profile(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn topology(msg: impl Into<String>) -> Self {
        Error::Topology(msg.into())
    }
}
