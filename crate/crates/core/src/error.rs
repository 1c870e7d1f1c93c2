use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("degenerate design: {0}")]
    DegenerateDesign(&'static str),
    #[error("non-finite parameter during {stage} at iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },
    #[error("mixture density {density:e} below floor at level {level}")]
    DegenerateDensity { level: f64, density: f64 },
    #[error("could not bracket quantile at level {0}")]
    BracketFailure(f64),
    #[error("no candidate lambda is feasible (lambda = 0 fails the band)")]
    InfeasibleAll,
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("improvement baseline must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("reference equals oracle value {0}; improvement undefined")]
    DegenerateReference(f64),
    #[error("k = {k} exceeds number of points {points}")]
    TooFewPoints { k: usize, points: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("repeat {repeat}, method {method}: {source}")]
    InRepeat {
        repeat: usize,
        method: &'static str,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn in_repeat(self, repeat: usize, method: &'static str) -> Self {
        Error::InRepeat {
            repeat,
            method,
            source: alloc::boxed::Box::new(self),
        }
    }
}
