use thiserror::Error;

/// Errors raised by grid, form, map and flow operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported dimension {0} (expected 2 or 4)")]
    UnsupportedDimension(usize),
    #[error("invalid resolution {0}: points per axis must be a power of two >= 8")]
    InvalidResolution(usize),
    #[error("axis {axis} out of range for a {dim}-dimensional grid")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("degree mismatch: {0}")]
    DegreeMismatch(String),
    #[error("top degree: cannot differentiate a {0}-form on a {0}-dimensional torus")]
    TopDegree(usize),
    #[error("degree {0} not allowed here: {1}")]
    InvalidDegree(usize, &'static str),
    #[error("unsupported structure {structure} on a {dim}-dimensional torus")]
    UnsupportedStructure { structure: &'static str, dim: usize },
    #[error("non-constant form passed where constant coefficients are required")]
    NonConstantForm,
    #[error("map is not a local diffeomorphism: det(Df) <= 0 at {count} grid points (min {min_det:e} at point {worst_index})")]
    NonPositiveJacobian {
        count: usize,
        min_det: f64,
        worst_index: usize,
    },
    #[error("inverse did not converge after {iterations} iterations (worst residual {worst_residual:e})")]
    InverseNotConverged {
        iterations: usize,
        worst_residual: f64,
    },
    #[error("coefficient must be positive, got {0}")]
    NonPositiveCoefficient(f64),
    #[error("time step underflow at t = {t}: dt = {dt:e}")]
    StepUnderflow { t: f64, dt: f64 },
    #[error("invalid configuration: {key}: {message}")]
    Config { key: String, message: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
