//! A majorization-minimization toolkit: a checked MM engine, Bregman-based
//! first-order solvers, projection machinery, convergence diagnostics, and
//! reproductions of MM cycling with the viscosity remedy.

pub mod bregman;
pub mod cli;
pub mod counterexamples;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod problems;
pub mod projection;

pub use error::{MmError, Result};
pub use linalg::{RealMatrix, RealVector};
