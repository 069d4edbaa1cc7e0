use std::path::PathBuf;

use thiserror::Error;

use crate::world_graph::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("world has no traversable cells")]
    EmptyWorld,

    #[error("obstacle mask has {got} cells, expected {rows}x{cols}")]
    MaskShape { rows: usize, cols: usize, got: usize },

    #[error("node {0} is not in the graph")]
    InvalidNode(NodeId),

    #[error("no path from node {src} to node {dst}")]
    NoPath { src: NodeId, dst: NodeId },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("decay series is empty")]
    EmptySeries,

    #[error("no samples have been recorded")]
    NoSteps,

    #[error("least-squares fit is rank deficient: all predictor values are identical")]
    RankDeficient,

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }
}
