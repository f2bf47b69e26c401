use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompileError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Semantic { line: usize, msg: String },
    #[error("line {line}: loop is not vectorizable: {msg}")]
    NotVectorizable { line: usize, msg: String },
    #[error("dependence cycle through node {0}")]
    Cycle(usize),
    #[error("{0}")]
    Capacity(String),
}

pub type Result<T> = std::result::Result<T, CompileError>;
