use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("derivatives are singular at the origin for degree {degree} < 2")]
    SingularPoint { degree: f64 },

    #[error("hessian determinant {det:e} falls below floor {floor:e}")]
    DegenerateHessian { det: f64, floor: f64 },

    #[error("newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("point lies outside the invertibility domain")]
    OutsideDomain,

    #[error("support slack {eta} must lie in (0, {radius})")]
    BadSlack { eta: f64, radius: f64 },

    #[error("accumulated envelope slack {slack} leaves the admissible ball of radius {limit}")]
    SupportOverflow { slack: f64, limit: f64 },

    #[error("estimated {needed:e} point checks exceed the budget of {budget:e}")]
    BudgetExceeded { needed: f64, budget: f64 },

    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),

    #[error("quadrature needs {needed} nodes per axis but only {available} are allowed")]
    ResolutionTooLow { needed: usize, available: usize },

    #[error("phase hessian is singular at the critical point")]
    SingularHessian,

    #[error("phase gradient has norm {norm:e} at the proposed critical point")]
    WrongCriticalPoint { norm: f64 },

    #[error("phase gradient drops to {min} on the amplitude support (need >= 1)")]
    GradientTooSmall { min: f64 },

    #[error("epsilon {0} outside the admissible range (0, 1/2)")]
    BadEpsilon(f64),

    #[error("no crossover: degree {d} does not exceed n-1 = {m}")]
    NoCrossover { d: f64, m: f64 },

    #[error("series test needs s > (n-1)/2, got s = {s}")]
    BadHypothesis { s: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
