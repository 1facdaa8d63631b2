use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("divergent estimate: zeta argument {0} <= 1")]
    DivergentEstimate(f64),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("coincident positions for sites {0} and {1}")]
    SingularCoupling(usize, usize),
    #[error("unstable crystal: mode {mode} has squared frequency factor {value}")]
    UnstableCrystal { mode: usize, value: f64 },
    #[error("resonant detuning for mode {0}")]
    ResonantDetuning(usize),
    #[error("time grid under-resolved: step {actual:e} exceeds required {required:e}")]
    Resolution { required: f64, actual: f64 },
    #[error("time grid must be strictly increasing")]
    NonMonotoneGrid,
    #[error("quadrature did not reach tolerance {tol:e} (last change {change:e})")]
    Quadrature { tol: f64, change: f64 },
    #[error("Hilbert-space dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("precision target missed: {0}")]
    Precision(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
