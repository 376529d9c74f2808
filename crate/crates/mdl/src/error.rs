use thiserror::Error;

#[derive(Debug, Error)]
pub enum MdlError {
    #[error("bad point: {0}")]
    BadPoint(String),
    #[error("unknown vertex {0}")]
    UnknownVertex(usize),
    #[error("unknown edge {0}")]
    UnknownEdge(usize),
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("bad argument: {0}")]
    BadArgument(String),
    #[error("depth mismatch: {0}")]
    DepthMismatch(String),
    #[error("insufficient depth: {0}")]
    InsufficientDepth(String),
    #[error("not liftable here: {0}")]
    NotLiftable(String),
    #[error("isolated time {0}")]
    IsolatedTime(f64),
    #[error("multiplicity: fragment revisits its image near t = {0}")]
    Multiplicity(f64),
    #[error("not a tree: {0}")]
    NotATree(String),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MdlError>;
