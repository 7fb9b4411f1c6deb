//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MagicError {
    #[error("argument error: {0}")]
    Argument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible truncation at coordinate {index}: lower {lower} >= upper {upper}")]
    InfeasibleTruncation { index: usize, lower: f64, upper: f64 },

    #[error("solver did not converge in {max_iter} sweeps (KKT residual {residual:.3e})")]
    NonConvergence { max_iter: usize, residual: f64 },

    #[error("state violates the selection constraints: {0}")]
    ConstraintViolation(String),

    #[error("singular selection: {0}")]
    SingularSelection(String),

    #[error("model fit failed: {0}")]
    ModelFit(String),

    #[error("confidence grid too coarse: no grid point retained (max p-value {max_p:.4} at {at_value})")]
    GridTooCoarse { max_p: f64, at_value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MagicError {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical/other.
    pub fn exit_code(&self) -> i32 {
        match self {
            MagicError::Config(_) | MagicError::Argument(_) => 2,
            MagicError::Data(_) | MagicError::Io(_) | MagicError::Json(_) => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, MagicError>;
