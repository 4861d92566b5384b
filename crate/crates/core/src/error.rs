use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid medium: {0}")]
    Medium(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("solver unstable at step {step}: field norm {norm:.3e}")]
    Unstable { step: usize, norm: f64 },
    #[error("geodesic left the domain at parameter {0:.4}")]
    GeodesicExit(f64),
    #[error("conjugate gradient breakdown at iteration {iteration}: curvature {curvature:.3e}")]
    CgBreakdown { iteration: usize, curvature: f64 },
    #[error("operator too large to cache: {dof} degrees of freedom (limit {limit})")]
    TooLarge { dof: usize, limit: usize },
    #[error("no sign convention reproduces the interior inner product (best error {0:.3e})")]
    Convention(f64),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cached operator format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
