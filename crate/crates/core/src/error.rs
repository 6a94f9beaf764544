use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Every failure the numerical core can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-positive density at node {index}: {what} = {value}")]
    NonPositiveDensity {
        index: usize,
        what: &'static str,
        value: f64,
    },
    #[error("pole condition violated at x = {x}: {reason}")]
    BoundaryViolation { x: f64, reason: &'static str },
    #[error("invalid fiber: {0}")]
    InvalidFiber(&'static str),
    #[error("grid error: {0}")]
    GridError(&'static str),
    #[error("degenerate fiber at node {index}: psi = {psi:e}")]
    DegenerateFiber { index: usize, psi: f64 },
    #[error("no paper-literal right-hand side for this product")]
    UnsupportedState,
    #[error("time {t} is past the singular time {t_sing}")]
    PastSingularTime { t: f64, t_sing: f64 },
    #[error("ODE step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("singular mass matrix entry at node {index}: {value:e}")]
    SingularMass { index: usize, value: f64 },
    #[error("flow step underflow: dt = {dt:e}")]
    StepUnderflow { dt: f64 },
    #[error("eigen solver did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },
    #[error("test function is identically zero")]
    ZeroFunction,
    #[error("trajectory sample {index} carries no velocity")]
    MissingVelocity { index: usize },
}
