//! Identification of spatially varying stiffness and damping in a vibrating
//! Euler–Bernoulli beam by training a parameter network through a
//! differentiable method-of-lines solver, with regression and
//! physics-informed baselines for comparison.

pub mod baselines;
pub mod beam;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod field;
pub mod net;
pub mod problem;
pub mod solver;
pub mod trainer;

pub use error::{Error, Result};
