use thiserror::Error;

#[derive(Debug, Error)]
pub enum IsacError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown preset `{0}` (expected `paper` or `desk`)")]
    UnknownPreset(String),

    #[error("degenerate geometry: target distance {0} m is not positive")]
    DegenerateGeometry(f64),

    #[error("grazing-angle singularity: {0}")]
    Singularity(String),

    #[error("target {target} is not illuminated (sensing gain {gain:e})")]
    NoIllumination { target: usize, gain: f64 },

    #[error("ill-conditioned matrix (condition number {0:e})")]
    IllConditioned(f64),

    #[error("zero channel vector for user {0}")]
    ZeroChannel(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("stage-I timing infeasible: {users} re-estimations need {needed} symbols, frame has {available}")]
    StageOneInfeasible {
        users: usize,
        needed: usize,
        available: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("root bracketing failed: {0}")]
    Bracket(String),

    #[error("no candidate decision could be evaluated")]
    NoFeasibleCandidate,

    #[error("empty series")]
    EmptySeries,

    #[error("misaligned series: {0}")]
    Misaligned(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IsacError>;
