use thiserror::Error;

use crate::isa::MatRange;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("row {row} out of range (mat has {rows} rows)")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("mat {mat} out of range (module has {mats} mats)")]
    MatOutOfRange { mat: usize, mats: usize },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("layout overflow: {elements} elements exceed capacity {capacity}")]
    LayoutOverflow { elements: usize, capacity: usize },
    #[error("invalid mat range [{begin}, {end}]")]
    InvalidMatRange { begin: usize, end: usize },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("placement mismatch: {0}")]
    Placement(String),
    #[error("out of scratch rows: need {need}, have {have}")]
    ScratchExhausted { need: usize, have: usize },
    #[error("move must stay within one mat, got {src} -> {dst}")]
    CrossMatLocalMove { src: usize, dst: usize },
    #[error("inter-mat move requires distinct mats, got mat {0} twice")]
    SameMatGlobalMove(usize),
    #[error("column {column} not aligned to {width}-bit move width")]
    Unaligned { column: usize, width: usize },
    #[error("unresolved mat label {label} for process {pid}")]
    UnresolvedLabel { label: String, pid: u32 },
    #[error("allocation failed: {0}")]
    Alloc(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mat range {0} does not fit this module")]
    RangeOutsideModule(MatRange),
}

pub type Result<T> = std::result::Result<T, Error>;
