//! Numerical toolkit for evolution equations driven by fractional Brownian
//! motion: fractional operators, fBm sampling, spectral Ornstein-Uhlenbeck
//! models, null controllability and Girsanov densities.

pub mod error;
pub mod fractional;
pub mod grid;
pub mod io;
pub mod noise;
pub mod quad;
pub mod spectral;
pub mod control;
pub mod girsanov;
pub mod stats;
pub mod experiment;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction, HurstParameter, Roughness, MIN_OPERATOR_STEPS};
