use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not unimodular (det = {det})")]
    NotUnimodular { det: f64 },

    #[error("matrix is not hyperbolic: eigenvalue of modulus {modulus} lies within 1e-9 of the unit circle")]
    NotHyperbolic { modulus: f64 },

    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error("globalization required: sup of the multiplier is q = {q} >= 1")]
    GlobalizationRequired { q: f64 },

    #[error("globalization failed: multiplier {lambda} >= 1 at b = {b:?}")]
    GlobalizationFailure { b: Vec<f64>, lambda: f64 },

    #[error("theta = mu^alpha * q = {theta} >= 1 (mu = {mu}, alpha = {alpha}, q = {q})")]
    ThetaTooLarge {
        theta: f64,
        mu: f64,
        alpha: f64,
        q: f64,
    },

    #[error("x = {x} outside the fiber domain [0, {epsilon}]")]
    Domain { x: f64, epsilon: f64 },

    #[error(
        "shifted argument {shifted} escapes [0, 1] at b = {b:?}, x = {x}; reduce epsilon or A_C"
    )]
    DomainEscape { b: Vec<f64>, x: f64, shifted: f64 },

    #[error("Picard iteration diverges (contraction ratios {ratios:?}); try a smaller epsilon")]
    Divergence { ratios: Vec<f64> },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("estimation refused: {0}")]
    Estimation(String),

    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
