use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite value produced by `{op}` at element {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pipeline order error: {0}")]
    PipelineOrder(String),
    #[error("memory bank holds no tokens")]
    EmptyMemory,
    #[error("ground truth has no valid points")]
    EmptyGroundTruth,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("correspondences are rank deficient: {0}")]
    Rank(String),
    #[error("sequence too short: {0}")]
    InsufficientLength(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
