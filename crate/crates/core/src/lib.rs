//! Discrete operators, spectral analysis and decay certificates for the
//! one-dimensional linear relaxation Boltzmann equation in Hermite variables.

pub mod certificate;
pub mod error;
pub mod evolution;
pub mod ladder;
pub mod linalg;
pub mod phase;
pub mod potential;
pub mod report;
pub mod selftest;
pub mod spatial;
pub mod spectral;

pub use error::{Error, Result};
