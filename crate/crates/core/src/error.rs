use thiserror::Error;

/// Errors raised by models, simulations, checks and estimators.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum SdeError {
    /// Caller supplied arguments that violate an operation's contract.
    #[error("usage error: {0}")]
    Usage(String),
    /// A coefficient produced a non-finite value at a finite input.
    #[error("model-domain error in {what} at coordinate {coordinate} (t = {t}): value {value}")]
    ModelDomain {
        what: &'static str,
        coordinate: usize,
        t: f64,
        value: f64,
    },
    /// A requested allocation exceeds the configured guard.
    #[error("resource error: {0}")]
    Resource(String),
    /// Monte Carlo estimation could not produce a value.
    #[error("estimation error: {0}")]
    Estimation(String),
    /// Adaptive quadrature failed to reach its tolerance.
    #[error("quadrature error: {0}")]
    Quadrature(String),
    /// A self-check inside the library failed.
    #[error("internal error: {0}")]
    Internal(String),
}

impl SdeError {
    pub(crate) fn usage<T: ToString>(msg: T) -> Self {
        SdeError::Usage(msg.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SdeError>;
