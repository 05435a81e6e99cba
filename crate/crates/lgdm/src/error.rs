use thiserror::Error;

/// Errors produced by mesh generation, assembly and the nonlinear driver.
#[derive(Debug, Error)]
pub enum LgdmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("inverted element {element}: det J = {det_j:.6e} <= 0")]
    InvertedElement { element: usize, det_j: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unsupported constraint: {0}")]
    UnsupportedConstraint(String),

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error(
        "load step {step} failed after {iterations} iterations \
         (last residual norms: {residual_norms:?})"
    )]
    StepFailure {
        step: usize,
        iterations: usize,
        residual_norms: Vec<f64>,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LgdmError>;
