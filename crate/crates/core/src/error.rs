use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("unknown operation `{0}`")]
    UnknownOperation(String),

    #[error("wrong edge count: expected {expected}, got {got}")]
    WrongEdgeCount { expected: usize, got: usize },

    #[error("operation index {index} out of range for {ops} operations")]
    OpOutOfRange { index: usize, ops: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("cells come from different search spaces")]
    SpecMismatch,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("requested {requested} neighbors but the neighborhood only has {available}")]
    NeighborhoodTooSmall { requested: usize, available: u64 },

    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("incomplete benchmark: {missing} cells missing (first: {examples:?})")]
    IncompleteCoverage { missing: u64, examples: Vec<String> },

    #[error("duplicate cell `{cell}` at line {line}")]
    DuplicateCell { cell: String, line: usize },

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("epoch {epoch} out of range (benchmark has {epochs} epochs)")]
    EpochOutOfRange { epoch: usize, epochs: usize },

    #[error("space of {size} cells exceeds the limit of {limit} for {what}")]
    SpaceTooLarge { size: u128, limit: u128, what: &'static str },

    #[error("empty input for {0}")]
    Empty(&'static str),

    #[error("invalid noise: {0}")]
    InvalidNoise(String),

    #[error("search space has no zero or skip operation")]
    MissingSpecialOps,

    #[error("operation {index} is neither the zero nor the skip operation")]
    NotSpecialOp { index: usize },

    #[error("zero probability mass at operation {index} on edge {edge}")]
    ZeroMass { edge: usize, index: usize },

    #[error("aggregation `{0}` is not differentiable")]
    NonDifferentiable(String),

    #[error("rank correlation undefined: {0}")]
    Degenerate(&'static str),

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam { name, reason: reason.into() }
    }
}
