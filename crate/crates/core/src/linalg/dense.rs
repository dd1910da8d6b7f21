//! Dense eigensolvers backed by faer, with nalgebra matrices at the boundary.
//!
//! faer runs sequentially here so results are bitwise reproducible.

use std::sync::Once;

use faer::{Mat, Side};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

static SEQUENTIAL: Once = Once::new();

fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Ascending eigenvalues of a symmetric matrix (lower triangle is read).
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    square(m)?;
    let mut ev = to_faer(m)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::NoConvergence {
            what: "dense symmetric eigensolver",
            iterations: 0,
            residual: f64::NAN,
        })?;
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Ascending eigenpairs of a symmetric matrix; eigenvectors are columns.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    square(m)?;
    let evd = to_faer(m)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::NoConvergence {
            what: "dense symmetric eigensolver",
            iterations: 0,
            residual: f64::NAN,
        })?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let values = order.iter().map(|&i| s[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, order[j])]);
    Ok((values, vectors))
}

/// Eigenvalues of a general real matrix, sorted by real part then imaginary part.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    square(m)?;
    let ev = to_faer(m).eigenvalues().map_err(|_| Error::NoConvergence {
        what: "dense nonsymmetric eigensolver",
        iterations: 0,
        residual: f64::NAN,
    })?;
    let mut out: Vec<Complex64> = ev.into_iter().map(|z| Complex64::new(z.re, z.im)).collect();
    out.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(out)
}

/// Singular values, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut sv = to_faer(m).singular_values().map_err(|_| Error::NoConvergence {
        what: "dense SVD",
        iterations: 0,
        residual: f64::NAN,
    })?;
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_small() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let ev = symmetric_eigenvalues(&m).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
        let (vals, vecs) = symmetric_eigen(&m).unwrap();
        assert_eq!(vals.len(), 2);
        let v0 = vecs.column(0);
        assert!(((&m * v0) - v0 * vals[0]).norm() < 1e-13);
    }

    #[test]
    fn rotation_has_imaginary_pair() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = eigenvalues(&m).unwrap();
        assert!(ev.iter().all(|z| z.re.abs() < 1e-14));
        assert!((ev[0].im + 1.0).abs() < 1e-14 && (ev[1].im - 1.0).abs() < 1e-14);
    }
}
