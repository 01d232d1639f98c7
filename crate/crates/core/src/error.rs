use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("fields belong to different grids")]
    GridMismatch,
    #[error("index {index} out of range for {len} densities")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("ball of radius {radius} around ({x}, {y}) leaves the domain")]
    BallOutsideDomain { x: f64, y: f64, radius: f64 },
    #[error("radius {radius} is below the minimum {min}")]
    RadiusTooSmall { radius: f64, min: f64 },
    #[error("{0} did not converge after {1} iterations")]
    NoConvergence(String, usize),
    #[error("coercivity fails for density {density}: smallest eigenvalue {min_eigenvalue}")]
    CoercivityViolated { density: usize, min_eigenvalue: f64 },
    #[error("diffusion coefficient must be positive, got {0}")]
    NonPositive(f64),
    #[error("inadmissible boundary data: {0}")]
    Inadmissible(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
