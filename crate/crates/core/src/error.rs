use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid volatility band: sigma_min={sigma_min}, sigma_max={sigma_max}")]
    InvalidBand { sigma_min: f64, sigma_max: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("explicit scheme unstable: dt={dt} exceeds dx^2/sigma_max^2={limit}")]
    Unstable { dt: f64, limit: f64 },

    #[error("non-finite value in {stage} at step {step}")]
    NonFinite { stage: &'static str, step: usize },

    #[error("degenerate distribution table: {0}")]
    DegenerateTable(String),

    #[error("length mismatch: expected {expected}, got {got} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("relaxed control weights at step {step} sum to {sum}")]
    WeightsNotNormalized { step: usize, sum: f64 },

    #[error("action {0} is not on the action grid")]
    ActionNotOnGrid(f64),

    #[error("zero quadratic-variation increment at path {path}")]
    DegenerateVolatility { path: usize },

    #[error("no scenario estimates supplied")]
    EmptyScenarioSet,

    #[error("regression needs at least {basis} paths, got {paths}")]
    TooFewPaths { paths: usize, basis: usize },

    #[error("singular normal equations even after ridge regularization")]
    Singular,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Errors produced by the numerics themselves rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Singular | Error::DegenerateTable(_) | Error::DegenerateVolatility { .. }
        )
    }
}
