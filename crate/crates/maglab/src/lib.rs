//! Numerical laboratory for the time-dependent magnetic Schrödinger equation
//! −iu′ + (i∇ + χ(t)a)²u = f with Dirichlet data: Crank–Nicolson propagation,
//! a-priori bound checks, Carleman weight diagnostics and recovery of the
//! vector potential from boundary Neumann traces.

pub mod error;
pub mod carleman;
pub mod config;
pub mod diagnostics;
pub mod grid;
pub mod hamiltonian;
pub mod inverse;
pub mod linalg;
pub mod rng;
pub mod run;

pub use error::{Error, Result};
pub use grid::{BoundarySubset, Grid, VectorField, C64};
