//! Functional flow matching on periodic 2D grids with mini-batch optimal
//! transport coupling.
//!
//! Noise functions are drawn from a Matérn Gaussian random field, paired with
//! data functions by an exact assignment solver, and a Fourier neural operator
//! learns the straight-line velocity between each pair. Sampling integrates the
//! learned field with fixed-step Euler or RK4.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datagen;
pub mod error;
pub mod evalmetrics;
pub mod grf;
pub mod io;
pub mod neuralop;
pub mod oracles;
pub mod otcouple;
pub mod probpaths;
pub mod rng;
pub mod sampler;
pub mod tensorgrid;
pub mod trainer;

pub use error::{Error, Result};
pub use grf::{GrfSampler, KernelSpec};
pub use neuralop::{FnoConfig, OperatorParams};
pub use tensorgrid::{Field, GridSpec, SpectralField};
