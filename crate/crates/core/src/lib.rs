//! Exact and Monte Carlo analysis of Wishart-type matrices built from
//! increments of self-similar Gaussian processes.

pub mod cli;
pub mod config;
pub mod error;
pub mod functional;
pub mod increments;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod quadrature;
pub mod sampler;
pub mod spectra;
pub mod stats;

pub use error::{LabError, Result};
pub use kernels::{Grid, ProcessKind, ProcessSpec, Regime};
