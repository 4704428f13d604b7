use std::io;

/// Errors produced by the highlighting engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("range {start}..{end} is outside source of length {len}")]
    Range { start: usize, end: usize, len: usize },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("budget error: requested {requested} tokens but only {available} are eligible")]
    Budget { requested: usize, available: usize },

    #[error("spans overlap or are out of order at span {index}")]
    Overlap { index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("solver unavailable after {attempts} attempts: {last}")]
    SolverUnavailable { attempts: u32, last: String },

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
