use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("torus grid needs an even number of nodes >= 8, got {0}")]
    InvalidTorusGrid(usize),
    #[error("invalid y-window: {0}")]
    InvalidYGrid(String),
    #[error("field has nonzero mean {mean:e} where a zero-mean field is required ({context})")]
    NonZeroMean { context: String, mean: f64 },
    #[error("source is not centered against the invariant density: integral = {integral:e} ({context})")]
    NotCentered { context: String, integral: f64 },
    #[error("invariant density is not integrable on the window")]
    NonIntegrable,
    #[error("model violates its assumptions: {0}")]
    InvalidModel(String),
    #[error("cell problem right side has nonzero mean {0:e}")]
    Incompatible(f64),
    #[error("coefficient violates ellipticity bounds: {0}")]
    NotElliptic(String),
    #[error("cascade depth {requested} exceeds the maximum {max}")]
    CascadeDepthExceeded { requested: usize, max: usize },
    #[error("corrector depth {available} is below the required depth {required}")]
    DepthInsufficient { available: usize, required: usize },
    #[error("schedule requested {requested} before its inputs were available")]
    ScheduleCycle { requested: String },
    #[error("window too small: edge value {edge:e} exceeds {bound:e}")]
    WindowTooSmall { edge: f64, bound: f64 },
    #[error("derivative of order {requested} exceeds the cached maximum {max}")]
    DerivativeOrderExceeded { requested: usize, max: usize },
    #[error("torus flow did not decay: {0}")]
    NoDecay(String),
    #[error("grid does not resolve the problem: {0}")]
    ResolutionViolation(String),
    #[error("environment path covers {available} but {required} is needed")]
    PathTooShort { available: f64, required: f64 },
    #[error("estimated cost {cost} node-steps exceeds the budget {budget}")]
    Unaffordable { cost: u64, budget: u64 },
    #[error("alpha = {alpha} is not supported: {reason}")]
    UnsupportedAlpha { alpha: f64, reason: String },
    #[error("missing ingredient: {0}")]
    MissingIngredient(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
