use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle is too close to pi for a unique logarithm")]
    AngleAtPi,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("frame index ({i}, {j}) out of range for a chain with {links} links")]
    IndexOutOfRange { i: usize, j: usize, links: usize },
    #[error("encoder standard deviation must be non-negative (joint {0})")]
    NegativeSigma(usize),
    #[error("preintegration interval must be positive (got {0} s)")]
    NonPositiveInterval(f64),
    #[error("contact broken inside the preintegration interval")]
    BrokenContact,
    #[error("measurement stream is empty")]
    EmptyStream,
    #[error("timestamps must be strictly increasing ({prev} then {next})")]
    NonMonotoneTime { prev: f64, next: f64 },
    #[error("node {node} has no contact state for foot {foot}")]
    MissingContactState { node: usize, foot: usize },
    #[error("factor covariance is not positive definite")]
    SingularCovariance,
    #[error("graph has no prior factor anchoring it")]
    NotAnchored,
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),
    #[error("contact pose is unreachable by the kinematic chain (residual {0:.3e})")]
    InfeasibleChain(f64),
    #[error("no ground-truth or node timestamp matches t = {0}")]
    TimestampMismatch(f64),
    #[error("input is empty")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
