//! Oriented continuous spectral convolution.
//!
//! A SONIC layer filters a real field by multiplying its DFT with a
//! low-rank symbol built from a handful of oriented rational modes. The
//! modes are functions of continuous frequency, so the same parameters can
//! be sampled on any grid.
//!
//! Module map:
//! - [`grid`]: frequency lattices, real FFTs, standardization.
//! - [`modes`]: single-mode parameterization and transfer functions.
//! - [`operator`]: symbol assembly, blocks, networks, serialization.
//! - [`gradients`]: analytic reverse mode plus a finite-difference oracle.
//! - [`tasks`]: SynthShape and HalliGalli generators and perturbations.
//! - [`train`]: losses, metrics, AdamW, training and robustness evaluation.
//! - [`oracle`]: brute-force references used for verification.

pub mod error;
pub mod exec;
pub mod gradients;
pub mod grid;
pub mod modes;
pub mod operator;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod tasks;
pub mod train;

pub use error::{Result, SonicError};
pub use exec::Execution;
