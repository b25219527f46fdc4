use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix or vector contains NaN or infinite entries")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("diagonal entry {index} is not strictly positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("degenerate ensemble: lambda_min(L_bar) = {lambda_min:e}, lambda_max(L_bar) = {lambda_max:e}")]
    DegenerateEnsemble { lambda_min: f64, lambda_max: f64 },
    #[error("problem is not homogeneous: client {0} differs from client 0")]
    NotHomogeneous(usize),
    #[error("matrix is singular (lambda_min = {0:e})")]
    SingularMatrix(f64),
    #[error("incompatible shape: {0}")]
    IncompatibleShape(String),
    #[error("no closed-form expectation for sketch {0}")]
    NoClosedForm(String),
    #[error("outcome space of {outcomes} joint realizations exceeds the budget of {budget}")]
    TooLarge { outcomes: f64, budget: usize },
    #[error("no expectation available for sketch {0}")]
    NoExpectation(String),
    #[error("theta is inadmissible for this sketch/problem pair")]
    ThetaInadmissible,
    #[error("step size {gamma} exceeds 1/theta = {limit}")]
    StepTooLarge { gamma: f64, limit: f64 },
    #[error("step size {gamma} outside (0, {limit}]")]
    StepSizeOutOfRange { gamma: f64, limit: f64 },
    #[error("beta = {beta}, c = {c} violates beta > 0, c > 0, beta + c < 1")]
    BetaOutOfRange { beta: f64, c: f64 },
    #[error("neighborhood multiplier denominator is non-positive at beta = {beta}, gamma = {gamma}")]
    DenominatorNonpositive { beta: f64, gamma: f64 },
    #[error("operation not defined for {0}")]
    WrongKind(String),
    #[error("problem is not an interpolation problem")]
    NotInterpolation,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("invalid problem file: {0}")]
    InvalidProblemFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
