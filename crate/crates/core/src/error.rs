use thiserror::Error;

use crate::graph::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least 5 paired samples, got {0}")]
    TooFewSamples(usize),
    #[error("paired samples have mismatched lengths ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("threshold must be positive and finite, got {0}")]
    InvalidGamma(f64),

    #[error("graph contains a cycle through {0}")]
    Cyclic(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid node {node}: {reason}")]
    InvalidNode { node: NodeId, reason: String },
    #[error("edge {from} -> {to} goes backwards in time")]
    TimeReversedEdge { from: NodeId, to: NodeId },
    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),
    #[error("unknown fixture {0:?}")]
    UnknownFixture(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("normal equations are singular; use a positive ridge penalty (lambda > 0)")]
    SingularNormalEquations,

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
