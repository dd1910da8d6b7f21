//! Banded LU without pivoting.
//!
//! The time-stepping matrices `I + θ dt K` have a positive-definite symmetric
//! part, so elimination without row exchanges is stable for them.

use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    bw: usize,
    /// Row-major band storage: entry `(i, j)` lives at `i·(2bw+1) + (j + bw - i)`.
    data: Vec<f64>,
}

impl BandedLu {
    fn width(&self) -> usize {
        2 * self.bw + 1
    }

    fn at(&self, i: usize, j: usize) -> usize {
        i * self.width() + (j + self.bw - i)
    }

    /// Half-bandwidth of a sparse matrix.
    pub fn bandwidth(a: &CsrMatrix<f64>) -> usize {
        a.triplet_iter().map(|(i, j, _)| i.abs_diff(j)).max().unwrap_or(0)
    }

    /// Factors `a` in place of band storage with the given half-bandwidth.
    pub fn factor(a: &CsrMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!("banded LU needs a square matrix, got {}x{}", n, a.ncols())));
        }
        let bw = Self::bandwidth(a);
        let mut lu = BandedLu {
            n,
            bw,
            data: vec![0.0; n * (2 * bw + 1)],
        };
        for (i, j, &v) in a.triplet_iter() {
            let idx = lu.at(i, j);
            lu.data[idx] += v;
        }
        let scale = lu.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in 0..n {
            let pivot = lu.data[lu.at(k, k)];
            if pivot.abs() <= 1e-14 * scale {
                return Err(Error::NoConvergence {
                    what: "banded LU (zero pivot)",
                    iterations: k,
                    residual: pivot,
                });
            }
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                let lik_idx = lu.at(i, k);
                let m = lu.data[lik_idx] / pivot;
                if m == 0.0 {
                    continue;
                }
                lu.data[lik_idx] = m;
                for j in k + 1..=last {
                    let u = lu.data[lu.at(k, j)];
                    let idx = lu.at(i, j);
                    lu.data[idx] -= m * u;
                }
            }
        }
        Ok(lu)
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let (n, bw) = (self.n, self.bw);
        let mut x = b.clone();
        for i in 0..n {
            let start = i.saturating_sub(bw);
            let mut s = x[i];
            for j in start..i {
                s -= self.data[self.at(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let end = (i + bw).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=end {
                s -= self.data[self.at(i, j)] * x[j];
            }
            x[i] = s / self.data[self.at(i, i)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse;
    use nalgebra::DMatrix;

    #[test]
    fn agrees_with_dense_lu() {
        let n = 30;
        let bw = 4;
        let m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                3.0 + i as f64 * 0.1
            } else if i.abs_diff(j) <= bw {
                // skew part plus a small symmetric part
                let s = if i < j { 1.0 } else { -1.0 };
                s * 0.7 / (1.0 + i.abs_diff(j) as f64) + 0.05
            } else {
                0.0
            }
        });
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let lu = BandedLu::factor(&sparse::from_dense(&m)).unwrap();
        assert_eq!(BandedLu::bandwidth(&sparse::from_dense(&m)), bw);
        let x = lu.solve(&b);
        let oracle = m.clone().lu().solve(&b).unwrap();
        assert!((&x - &oracle).norm() < 1e-12 * oracle.norm());
        assert!((&m * &x - &b).norm() < 1e-12);
    }

    #[test]
    fn zero_pivot_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(BandedLu::factor(&sparse::from_dense(&m)).is_err());
    }
}
