use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("operator is not dissipative: eigenvalue {value} at mode {mode} is not strictly negative")]
    NonDissipative { mode: usize, value: f64 },
    #[error("price coefficient on the control mode {mode} is zero; cannot normalize the control direction")]
    ZeroPriceOnDirection { mode: usize },
    #[error("price coefficient on the control mode {mode} is negative ({value}); control direction would leave the positive cone")]
    NegativePriceOnDirection { mode: usize, value: f64 },
    #[error("discount rate must be finite and positive, got {0}")]
    InvalidDiscount(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("time grids of the path and the control differ")]
    GridMismatch,
    #[error("control increment at step {step} is not in the positive cone")]
    NegativeIncrement { step: usize },
    #[error("price floor violated: {0}")]
    PriceFloorViolated(String),
    #[error("invalid cost: {0}")]
    InvalidCost(String),
    #[error("directional derivative of the running cost is not affine")]
    NonlinearDirectionalDerivative,
    #[error("policy produced an inadmissible control at step {step}: {reason}")]
    InadmissiblePolicy { step: usize, reason: String },
    #[error("non-finite sample on path {path}")]
    NonFiniteSample { path: usize },
    #[error("Monte Carlo configuration: {0}")]
    InvalidMonteCarlo(String),
    #[error("projected SOR did not converge in {iterations} iterations (last update {last_update:e})")]
    NoConvergence { iterations: usize, last_update: f64 },
    #[error("noise on the controlled coordinate is zero; the obstacle problem is degenerate")]
    DegenerateNoise,
    #[error("stopping payoff does not reduce to one coordinate: {0}")]
    NotReducible(String),
    #[error("regression is ill-conditioned at step {step} (condition {condition:e})")]
    IllConditionedRegression { step: usize, condition: f64 },
    #[error("solution has no interior free boundary")]
    NoBoundary,
    #[error("finite-difference step too small: std error {std_error:e} exceeds 25% of |estimate| {estimate:e}")]
    StepTooSmall { estimate: f64, std_error: f64 },
    #[error("invalid application parameters: {0}")]
    InvalidParams(String),
    #[error("budget of {budget} paths is below the {required} needed")]
    BudgetTooSmall { budget: usize, required: usize },
    #[error("unknown suite '{0}'")]
    UnknownSuite(String),
    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
