use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),
    #[error("invalid complex: {0}")]
    InvalidComplex(String),
    #[error("duplicate sparse entry at ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },
    #[error("zero degree in row {0}")]
    SingularDegree(usize),
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("adjacency slots not bound: expected {expected}, got {got}")]
    UnboundAdjacency { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("rotation is not orthogonal with unit determinant")]
    NonOrthogonal,
    #[error("rotation is not an exact grid symmetry")]
    NotGridRotation,
    #[error("variant {variant} cannot be used with {detail}")]
    VariantMismatch { variant: String, detail: String },
    #[error("zero maximum for channel {0}")]
    ZeroMaximum(String),
    #[error("zero variance in conditioned targets")]
    ZeroVariance,
    #[error("return map did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergent { iterations: usize, residual: f64 },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("porosity target {0} infeasible")]
    InfeasiblePorosity(f64),
    #[error("missing grain labels")]
    MissingLabels,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
