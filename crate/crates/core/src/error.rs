use thiserror::Error;

/// Errors shared by parsing, legality checking, the engine and the session.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("illegal database: {0}")]
    Legality(String),
    #[error("invalid transaction: {0}")]
    Transaction(String),
    #[error("constraint compilation failed: {0}")]
    Compile(String),
    #[error("query flounders: {0}")]
    Flounder(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("malformed proof: {0}")]
    Proof(String),
    #[error("state file: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, Error>;
