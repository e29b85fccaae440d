//! Marketron model of market price dynamics: indifference pricing of European
//! options, Monte Carlo simulation of the hidden-state dynamics and
//! differential-evolution calibration to option quotes.

pub mod calibration;
pub mod config;
pub mod error;
pub mod kernels;
pub mod mc;
pub mod model;
pub mod oracle;
pub mod rbf;
pub mod special;
pub mod splitting;
pub mod volterra;

pub use error::{Error, Result};
pub use model::{ModelParams, OptionKind, Regularizer, SignalModel, State};
