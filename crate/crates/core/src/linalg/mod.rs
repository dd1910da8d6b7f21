//! Numerical kernels shared by the operator modules.

pub mod banded;
pub mod dense;
pub mod lanczos;
pub mod sparse;
pub mod tridiag;

use nalgebra::DVector;

/// Max-norm of a vector.
pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc: f64, &x| acc.max(x.abs()))
}
