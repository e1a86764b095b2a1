use thiserror::Error;

/// Everything the library can fail with. Solver failures carry enough
/// history to diagnose without rerunning.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("density infeasible: thinning reaches intensity {achieved:.4e}, below half of the target {target:.4e}")]
    DensityInfeasible { target: f64, achieved: f64 },

    #[error("grid under-resolves {what}: need spacing <= {required:.4e}, have {actual:.4e}")]
    UnderResolved { what: &'static str, required: f64, actual: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("constrained solve stagnated at residual {residual:.3e} (tol {tol:.1e}) after {iterations} iterations")]
    Stagnation { residual: f64, tol: f64, iterations: usize, history: Vec<f64> },

    #[error("fixed-point iteration diverged: contraction ratio {ratio:.3} >= 1 for 3 consecutive iterations (smallness indicator kappa*l^(eta-d) = {smallness:.3e})")]
    Divergence { ratio: f64, smallness: f64, ratios: Vec<f64> },

    #[error("support violation: {0}")]
    Support(String),

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { field, reason: reason.into() }
}
