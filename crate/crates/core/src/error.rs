use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("derivative order {0} exceeds 2")]
    DerivativeOrder(usize),

    #[error("Hölder exponent must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("pair set is empty")]
    EmptyPairSet,

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("analytic derivatives required for {0}")]
    MissingAnalytic(&'static str),

    #[error("field is not in the zero-jet space: f(0) = {value:e}, |Df(0)| = {gradient:e}")]
    JetNotZero { value: f64, gradient: f64 },

    #[error("fundamental solution is singular at z = 0")]
    SingularKernel,

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("jet value |c0| = {norm} lies outside the target ball of radius {radius}")]
    JetOutsideTarget { norm: f64, radius: f64 },

    #[error("leading coefficients are not elliptic at the origin, eigenvalues {eigenvalues:?}")]
    NotElliptic { eigenvalues: Vec<f64> },

    #[error("coefficient oracle failed at x = {node:?}: {what}")]
    OracleFailure { node: Vec<f64>, what: String },

    #[error("no convergence: radius fell below R_min = {r_min} (last tried {last_radius})")]
    NoConvergence { r_min: f64, last_radius: f64 },

    #[error("iterate escaped the ball of radius gamma = {gamma} after adaptation")]
    IterateEscaped { gamma: f64 },

    #[error("harmonic seed component {component} is not harmonic")]
    NotHarmonic { component: usize },

    #[error("no orthogonal partner: {0}")]
    NoPartner(String),

    #[error("invalid configuration at `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}
