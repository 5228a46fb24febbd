use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The queue is unstable for every tested Mellin parameter.
    #[error("unstable for all s: {0}")]
    Unstable(String),

    /// A constraint cannot be met even by the most favourable policy.
    #[error("infeasible: {0}")]
    Infeasible(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
