use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("series too short: {got} observations, need at least {need}")]
    TooShort { got: usize, need: usize },

    #[error("all observations equal {value}; the partial likelihood has no finite maximizer")]
    Separation { value: u32 },

    #[error("information matrix is numerically singular (condition number {condition:.3e})")]
    SingularHessian { condition: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("no convergence after {iterations} iterations (score norm {score_norm:.3e})")]
    NonConvergence { iterations: usize, score_norm: f64 },

    #[error("stationary distribution did not converge after {iterations} iterations")]
    StationaryNonConvergence { iterations: usize },

    #[error("monitoring has terminated: {0}")]
    MonitorTerminated(&'static str),

    #[error("no threshold available for gamma={gamma}, alpha={alpha}")]
    ThresholdUnavailable { gamma: f64, alpha: f64 },

    #[error("baseline missing for (state, week): {}", format_pairs(.0))]
    MissingBaseline(Vec<(String, u32)>),

    #[error("panel coverage gap: {0}")]
    Coverage(String),

    #[error("duplicate panel row for state {state}, year {year}, week {week}")]
    DuplicateRow { state: String, year: i32, week: u32 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_pairs(pairs: &[(String, u32)]) -> String {
    pairs
        .iter()
        .map(|(s, w)| format!("({s}, {w})"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T> = std::result::Result<T, Error>;
