use crate::nav_graph::NodeId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("candidate edges are disconnected ({} components): {components:?}", components.len())]
    Disconnected { components: Vec<Vec<NodeId>> },

    #[error("node {to} is unreachable from node {from}")]
    Unreachable { from: NodeId, to: NodeId },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("action {0} is not among the current candidates")]
    InvalidAction(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{}: {error}", path.display())]
    File { path: std::path::PathBuf, error: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
