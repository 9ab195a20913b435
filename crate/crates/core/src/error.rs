use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(
        "fixed-point iteration did not converge at t = {time} after {iterations} sweeps (last update {last_update:e})"
    )]
    Divergence {
        time: f64,
        iterations: usize,
        last_update: f64,
    },
    #[error("resource limit exceeded: {what} (cap {cap})")]
    ResourceLimit { what: &'static str, cap: usize },
    #[error("node {0} is absent or pruned")]
    MissingNode(String),
    #[error("birth density vanishes at t = {0}; the backward chain is absorbed")]
    Absorbing(f64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
