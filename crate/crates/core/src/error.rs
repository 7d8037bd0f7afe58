use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible discretizations: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty sample")]
    EmptySample,

    #[error("kernel is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("requested {requested} components but only {available} are available")]
    TooManyComponents { requested: usize, available: usize },

    #[error("degenerate spectrum: eigenvalues {0} and {1} are tied")]
    DegenerateSpectrum(usize, usize),

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("undefined estimate: {0}")]
    Undefined(String),

    #[error("rank deficient: lambda_hat[{index}] = {value:e} is below the numerical floor; lower L")]
    RankDeficient { index: usize, value: f64 },

    #[error("no admissible truncation: {0}")]
    NoTruncation(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
