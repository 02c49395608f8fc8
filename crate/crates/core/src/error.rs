use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty vector")]
    EmptyVector,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("format error on line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("combinatorial budget exceeded: C({n},{k}) > {limit}")]
    BudgetExceeded { n: usize, k: usize, limit: u64 },
    #[error("r too large for k (r = {r}, k = {k})")]
    RoundsTooLarge { r: usize, k: usize },
    #[error("pool exhausted: need {needed}, have {available}")]
    PoolExhausted { needed: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
