//! Symmetric Lanczos with full reorthogonalization.
//!
//! The operator is a closure, so matrix-free applications (inverse solves,
//! projected symmetric parts) plug in directly.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tridiag;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Smallest,
    Largest,
}

#[derive(Debug, Clone)]
pub struct LanczosOptions {
    pub wanted: usize,
    pub which: Which,
    /// Ritz residual tolerance relative to `max(1, |θ|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Check convergence every this many steps.
    pub check_every: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            wanted: 1,
            which: Which::Smallest,
            tol: 1e-10,
            max_iter: 600,
            seed: 42,
            check_every: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LanczosResult {
    /// Ritz values, ordered from the requested end inwards.
    pub values: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn orthogonalize(w: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(w);
            w.axpy(-c, q, 1.0);
        }
    }
}

/// Extreme eigenpairs of the symmetric operator `apply` on `R^n`, restricted
/// to the orthogonal complement of `constraints` (assumed orthonormal).
pub fn eigs<F>(n: usize, apply: F, constraints: &[DVector<f64>], opts: &LanczosOptions) -> Result<LanczosResult>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let free = n.saturating_sub(constraints.len());
    if opts.wanted == 0 || opts.wanted > free {
        return Err(Error::DimensionMismatch(format!(
            "requested {} eigenpairs from a {free}-dimensional space",
            opts.wanted
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    orthogonalize(&mut q, constraints);
    q /= q.norm();

    let max_iter = opts.max_iter.min(free);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(max_iter);
    let mut alphas: Vec<f64> = Vec::with_capacity(max_iter);
    let mut betas: Vec<f64> = Vec::with_capacity(max_iter);
    let mut last_residual = f64::INFINITY;

    for j in 0..max_iter {
        let mut w = apply(&q);
        let a = q.dot(&w);
        basis.push(q.clone());
        alphas.push(a);
        // constraints last, otherwise their components regrow through the basis
        orthogonalize(&mut w, &basis);
        orthogonalize(&mut w, constraints);
        let beta = w.norm();
        let steps = j + 1;
        let exhausted = steps == max_iter || beta <= 1e-14 * a.abs().max(1.0);
        if steps >= opts.wanted && (steps % opts.check_every == 0 || exhausted) {
            let result = ritz(&alphas, &betas, beta, &basis, opts);
            let worst = result
                .values
                .iter()
                .zip(&result.residuals)
                .map(|(t, r)| r / t.abs().max(1.0))
                .fold(0.0, f64::max);
            last_residual = worst;
            if worst <= opts.tol || beta <= 1e-14 * a.abs().max(1.0) {
                return Ok(LanczosResult {
                    iterations: steps,
                    ..result
                });
            }
        }
        if exhausted {
            break;
        }
        betas.push(beta);
        q = w / beta;
    }
    Err(Error::NoConvergence {
        what: "Lanczos eigensolver",
        iterations: basis.len(),
        residual: last_residual,
    })
}

fn ritz(alphas: &[f64], betas: &[f64], beta_next: f64, basis: &[DVector<f64>], opts: &LanczosOptions) -> LanczosResult {
    let values = match opts.which {
        Which::Smallest => tridiag::smallest_eigenvalues(alphas, betas, opts.wanted),
        Which::Largest => tridiag::largest_eigenvalues(alphas, betas, opts.wanted),
    };
    let mut vectors = Vec::with_capacity(values.len());
    let mut residuals = Vec::with_capacity(values.len());
    for &theta in &values {
        let s = tridiag::eigenvector(alphas, betas, theta);
        residuals.push(beta_next * s[s.len() - 1].abs());
        let mut y = DVector::zeros(basis[0].len());
        for (si, qi) in s.iter().zip(basis) {
            y.axpy(*si, qi, 1.0);
        }
        vectors.push(y);
    }
    LanczosResult {
        values,
        vectors,
        residuals,
        iterations: alphas.len(),
    }
}
