//! Band structure of periodic elastic waveguides whose cells are joined by
//! thin ligaments.
//!
//! The crate computes the essential spectrum two ways: direct Floquet–Bloch
//! finite element sweeps over the periodicity cell, and the first-order
//! asymptotic formula built from the isolated-cell spectrum and the
//! polarization matrix of the junction.

pub mod asymptotics;
pub mod cell_problem;
pub mod config;
pub mod eigen;
pub mod elastic;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod io;
pub mod limit;
pub mod pipeline;
pub mod runner;
pub mod sparse;

pub use error::{Error, Result};
