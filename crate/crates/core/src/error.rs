use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid demand model: {0}")]
    InvalidModel(String),

    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),

    #[error("decision {x} is outside the domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("models have different support bounds ({0} vs {1})")]
    SupportMismatch(f64, f64),

    #[error("sample window is empty")]
    EmptyWindow,

    #[error("detection needs a nonempty left window (epoch holds {0} sample)")]
    NoLeftWindow(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("hard-instance epsilon {0} is outside (0, 1/4) and clamping is disabled")]
    EpsilonOutOfRange(f64),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("incompatible configuration: {0}")]
    Incompatible(String),

    #[error("oracle failed: {0}")]
    Oracle(String),

    #[error("regret must be positive for a log-log fit (got {0})")]
    NonpositiveRegret(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
