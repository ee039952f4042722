use thiserror::Error;

/// Every failure mode of the numerical pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("phase point outside chart validity: {0}")]
    ChartViolation(String),
    #[error("degenerate evaluation: {0}")]
    Degenerate(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("value out of range at node {node}: {reason}")]
    OutOfRange { node: usize, reason: String },
    #[error("energy {energy} does not exceed max potential {max_potential}")]
    EnergyTooLow { energy: f64, max_potential: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("no section crossing within time budget {budget}")]
    NoCrossing { budget: f64 },
    #[error("tangential section crossing (transverse velocity {velocity:e})")]
    Tangency { velocity: f64 },
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("orbit is not periodic: return defect {defect:e}")]
    NotPeriodic { defect: f64 },
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("empty torus: {0}")]
    EmptyTorus(String),
    #[error("singular jacobian (det = {det:e})")]
    SingularJacobian { det: f64 },
    #[error("cycle classification changed: {0}")]
    ClassificationChange(String),
    #[error("point not on the shared energy surface: {0}")]
    NotOnSurface(String),
    #[error("vector fields not parallel (defect {defect:e})")]
    NotParallel { defect: f64 },
    #[error("small divisor |<k,w>| = {divisor:e} at k = {k:?}")]
    SmallDivisor { k: [i64; 2], divisor: f64 },
    #[error("cohomological residual {residual:e} exceeds {bound:e}")]
    ResidualTooLarge { residual: f64, bound: f64 },
    #[error("no lattice point in the action window")]
    WindowEmpty,
    #[error("mass operator is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositive { min_eig: f64 },
    #[error("eigensolver did not converge: {0}")]
    NotConverged(String),
    #[error("too few eigenvalues: {0}")]
    TooFewEigenvalues(usize),
    #[error("frequency ratio {ratio} is not within 1e-10 of {p}/{q}")]
    NotRational { ratio: f64, p: i64, q: i64 },
    #[error("degenerate critical point at {at} (second derivative {second:e})")]
    DegenerateCritical { at: f64, second: f64 },
    #[error("orbit not closed: return defect {defect:e}")]
    NotClosed { defect: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
