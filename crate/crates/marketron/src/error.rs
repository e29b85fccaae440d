use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("solver did not reach tolerance after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("solver breakdown at iteration {iterations} (relative residual {residual:.3e})")]
    Breakdown { iterations: usize, residual: f64 },
    #[error("fixed-point iteration diverged after {iterations} iterations")]
    Divergence { iterations: usize, history: Vec<f64> },
    #[error("tolerance not achieved: estimate {estimate:.6e}, error bound {bound:.3e}")]
    Tolerance { estimate: f64, bound: f64 },
    #[error("degenerate state: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("calibration aborted: {0}")]
    Aborted(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
