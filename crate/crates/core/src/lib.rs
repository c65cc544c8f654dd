//! Dynamics-informed diffusion forecasting with a PDE-regularized
//! interpolator and an unscented-Kalman forecaster.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: regular grids, fields and Laplacian eigenbases
//! - [`spde`]: Matérn kernels, fractional elliptic operators, random fields
//! - [`net`]: small MLPs with reverse-mode gradients
//! - [`ukf`]: the unscented Kalman filter and its Gaussian likelihood
//! - [`interpolator`], [`forecaster`]: the two training stages
//! - [`sampler`]: cold-sampling rollouts and ensembles
//! - [`datasets`]: synthetic dynamics and trajectory files
//! - [`metrics`], [`verify`]: scores and the numerical verification suite
//! - [`harness`]: configuration and the command implementations behind `pdy`

pub mod datasets;
pub mod error;
pub mod forecaster;
pub mod grid;
pub mod harness;
pub mod interpolator;
pub mod metrics;
pub mod net;
pub mod sampler;
pub mod spde;
pub mod ukf;
pub mod verify;

pub use error::{Error, Result};
