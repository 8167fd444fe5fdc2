use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters:\n{0}")]
    Validation(ValidationReport),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// A Riccati system left every bounded region before reaching the
    /// initial time.
    #[error("finite escape time in ({t_lo:.6}, {t_hi:.6})")]
    Escaped { t_lo: f64, t_hi: f64 },

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("non-finite simulation state on path {path} at t = {time}")]
    NonFiniteState { path: usize, time: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
