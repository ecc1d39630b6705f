use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies behind the camera (camera-frame depth {depth:e})")]
    BehindCamera { depth: f64 },
    #[error("degenerate line: the two points coincide up to scale")]
    DegenerateLine,
    #[error("lines are parallel")]
    ParallelLines,
    #[error("camera centers coincide (baseline {baseline:e} m)")]
    DegenerateBaseline { baseline: f64 },
    #[error("degenerate segment of length {length} px")]
    DegenerateSegment { length: f64 },
    #[error("invalid detection maps: {0}")]
    InvalidMaps(String),
    #[error("ground truth is empty; sAP is undefined")]
    EmptyGroundTruth,
    #[error("insufficient depth: {valid} of {total} samples valid")]
    InsufficientDepth { valid: usize, total: usize },
    #[error("too few correspondences: got {got}, need {need}")]
    TooFewCorrespondences { got: usize, need: usize },
    #[error("no consensus: best inlier ratio {ratio:.3}")]
    NoConsensus { ratio: f64 },
    #[error("retrieval list is empty")]
    EmptyRetrieval,
    #[error("no correspondences")]
    NoCorrespondences,
    #[error("optimizer diverged after {iterations} iterations (cost {cost:e})")]
    Diverged { iterations: usize, cost: f64 },
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI: 2 invalid input, 3 infeasible or
    /// degenerate, 4 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidMaps(_)
            | Error::EmptyGroundTruth
            | Error::EmptyRetrieval
            | Error::LengthMismatch { .. }
            | Error::InvalidInput(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::BehindCamera { .. }
            | Error::DegenerateLine
            | Error::ParallelLines
            | Error::DegenerateBaseline { .. }
            | Error::DegenerateSegment { .. }
            | Error::InsufficientDepth { .. }
            | Error::TooFewCorrespondences { .. }
            | Error::NoConsensus { .. }
            | Error::NoCorrespondences
            | Error::Diverged { .. }
            | Error::InfeasibleConfig(_) => 3,
        }
    }
}
