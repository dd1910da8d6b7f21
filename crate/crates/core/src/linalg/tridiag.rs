//! Symmetric tridiagonal eigenvalues by Sturm-sequence bisection.

/// Number of eigenvalues strictly below `x` for the symmetric tridiagonal
/// matrix with diagonal `d` and off-diagonal `e` (`e.len() == d.len() - 1`).
pub fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut count = 0;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..d.len() {
        if q.abs() < tiny {
            q = -tiny;
        }
        q = d[i] - x - e[i - 1] * e[i - 1] / q;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn gershgorin(d: &[f64], e: &[f64]) -> (f64, f64) {
    let n = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    (lo, hi)
}

/// The `k`-th smallest eigenvalue (0-based), bisected to machine resolution.
pub fn kth_eigenvalue(d: &[f64], e: &[f64], k: usize) -> f64 {
    assert!(k < d.len());
    let (mut lo, mut hi) = gershgorin(d, e);
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    lo -= 1e-14 * scale;
    hi += 1e-14 * scale;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(d, e, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn smallest_eigenvalues(d: &[f64], e: &[f64], m: usize) -> Vec<f64> {
    (0..m.min(d.len())).map(|k| kth_eigenvalue(d, e, k)).collect()
}

pub fn largest_eigenvalues(d: &[f64], e: &[f64], m: usize) -> Vec<f64> {
    let n = d.len();
    (0..m.min(n)).map(|k| kth_eigenvalue(d, e, n - 1 - k)).collect()
}

/// Solves `(T - shift) x = b` by Gaussian elimination with partial pivoting.
fn shifted_solve(d: &[f64], e: &[f64], shift: f64, b: &[f64]) -> Vec<f64> {
    let n = d.len();
    if n == 1 {
        let p = d[0] - shift;
        return vec![b[0] / if p == 0.0 { f64::EPSILON } else { p }];
    }
    // rows hold (diag, super, super-super) after elimination
    let mut diag: Vec<f64> = d.iter().map(|&x| x - shift).collect();
    let mut up1: Vec<f64> = e.to_vec();
    up1.push(0.0);
    let mut up2 = vec![0.0; n];
    let mut low: Vec<f64> = e.to_vec();
    let mut rhs = b.to_vec();
    let floor = f64::EPSILON * d.iter().chain(e).fold(0.0f64, |a, &x| a.max(x.abs())).max(1.0);
    for i in 0..n - 1 {
        if low[i].abs() > diag[i].abs() {
            // swap rows i and i+1
            std::mem::swap(&mut diag[i], &mut low[i]);
            let (a1, a2) = (up1[i], up2[i]);
            let next_diag = diag[i + 1];
            let next_up1 = if i + 1 < n - 1 { up1[i + 1] } else { 0.0 };
            up1[i] = next_diag;
            up2[i] = next_up1;
            diag[i + 1] = a1;
            if i + 1 < n - 1 {
                up1[i + 1] = a2;
            }
            rhs.swap(i, i + 1);
        }
        if diag[i] == 0.0 {
            diag[i] = floor;
        }
        let m = low[i] / diag[i];
        diag[i + 1] -= m * up1[i];
        if i + 1 < n - 1 {
            up1[i + 1] -= m * up2[i];
        }
        rhs[i + 1] -= m * rhs[i];
    }
    if diag[n - 1] == 0.0 {
        diag[n - 1] = floor;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        if i + 1 < n {
            s -= up1[i] * x[i + 1];
        }
        if i + 2 < n {
            s -= up2[i] * x[i + 2];
        }
        x[i] = s / diag[i];
    }
    x
}

/// Unit eigenvector for a (converged) eigenvalue by inverse iteration.
pub fn eigenvector(d: &[f64], e: &[f64], lambda: f64) -> Vec<f64> {
    let n = d.len();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let scale = d.iter().chain(e).fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
    let shift = lambda + 1e-13 * scale;
    for _ in 0..4 {
        let y = shifted_solve(d, e, shift, &x);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = y.into_iter().map(|v| v / norm).collect();
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense;
    use nalgebra::DMatrix;

    fn sample(n: usize) -> (Vec<f64>, Vec<f64>) {
        let d: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 3.0).collect();
        let e: Vec<f64> = (0..n - 1).map(|i| 0.5 + ((i * 13) % 7) as f64 * 0.3).collect();
        (d, e)
    }

    fn dense_of(d: &[f64], e: &[f64]) -> DMatrix<f64> {
        let n = d.len();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                d[i]
            } else if i + 1 == j {
                e[i]
            } else if j + 1 == i {
                e[j]
            } else {
                0.0
            }
        })
    }

    #[test]
    fn bisection_matches_dense() {
        let (d, e) = sample(40);
        let oracle = dense::symmetric_eigenvalues(&dense_of(&d, &e)).unwrap();
        for k in 0..40 {
            assert!((kth_eigenvalue(&d, &e, k) - oracle[k]).abs() < 1e-12);
        }
        let big = largest_eigenvalues(&d, &e, 3);
        assert!((big[0] - oracle[39]).abs() < 1e-12);
    }

    #[test]
    fn inverse_iteration_gives_eigenvector() {
        let (d, e) = sample(25);
        let t = dense_of(&d, &e);
        for k in [0, 12, 24] {
            let lambda = kth_eigenvalue(&d, &e, k);
            let v = nalgebra::DVector::from_vec(eigenvector(&d, &e, lambda));
            assert!((&t * &v - &v * lambda).norm() < 1e-10);
        }
    }
}
