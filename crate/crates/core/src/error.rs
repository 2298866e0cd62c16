use crate::tensorgrid::GridSpec;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0} vs {1}")]
    GridMismatch(GridSpec, GridSpec),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite activation in {layer}")]
    NonFiniteActivation { layer: String },
    #[error("non-finite loss at step {step} (last good checkpoint: {last_checkpoint})")]
    NonFiniteLoss { step: usize, last_checkpoint: String },
    #[error("CFL condition violated at step {step}: cfl = {cfl:.4}")]
    Cfl { step: usize, cfl: f64 },
    #[error("non-finite state at step {step}")]
    Diverged { step: usize },
    #[error("quadrature under-resolved: order-doubling discrepancy {0:e}")]
    Quadrature(f64),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
