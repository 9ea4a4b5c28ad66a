use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unstable system (rho = {rho}, delta = {delta}): no positive idle time")]
    Unstable { rho: f64, delta: f64 },

    #[error("no complete resource pooling (alpha + beta = {sum} <= 1): formulas out of validity region")]
    NotPooled { sum: f64 },

    #[error("fixed point not found on ({lo}, {hi}): {detail}")]
    FixedPointNotFound { lo: f64, hi: f64, detail: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("state space too large: {0}")]
    StateSpaceTooLarge(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
