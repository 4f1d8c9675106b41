//! Spectral Galerkin tools for parabolic equations on metric graphs driven by
//! Gaussian noise acting through the vertex conditions.

pub mod error;
pub mod fem;
pub mod graph;

pub use error::{Error, Result};
pub mod diagnostics;
pub mod dirichlet;
pub mod linalg;
pub mod rng;
pub mod sde;
pub mod solver;
pub mod spectral;
pub mod stats;
pub mod surjectivity;
