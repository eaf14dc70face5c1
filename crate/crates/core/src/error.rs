use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(
        "strength {strength} occurs {group_size} times but only {partitions} partitions are available"
    )]
    ResidualTie {
        strength: f64,
        group_size: usize,
        partitions: usize,
    },

    #[error("ranking contains tied strength {0}")]
    TiedStrengths(f64),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),

    #[error("response time {rt} is not above rt_min {rt_min}")]
    LinkSingularity { rt: f64, rt_min: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("ground-truth network degenerate after {0} attempts")]
    DegenerateGroundTruth(usize),

    #[error("at least 2 values required, got {0}")]
    TooFewValues(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
