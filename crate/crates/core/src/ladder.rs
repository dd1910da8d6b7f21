//! Truncated Hermite-basis velocity operators.
//!
//! Mode `k` is the normalized Hermite function `H_k = μ^{1/2} p_k` where `p_k`
//! are the orthonormal probabilists' Hermite polynomials. The annihilation
//! operator `b = γ^{1/2}(∂_v + v/2)` acts as `b H_k = √(γk) H_{k-1}`.
//! The cutoff is hard: mode `nv` and above do not exist, so `[B, Bᵀ]` is `γ`
//! on modes `0..nv-1` and `-γ(nv-1)` on the last one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LadderSet {
    pub nv: usize,
    pub gamma: f64,
    /// Annihilation `b`.
    pub b: DMatrix<f64>,
    /// Creation `b*`, the exact transpose of `b`.
    pub bdag: DMatrix<f64>,
    /// Unit-coefficient annihilation `c`.
    pub c: DMatrix<f64>,
    pub cdag: DMatrix<f64>,
    /// Number operator `b*b = diag(0, γ, 2γ, ...)`.
    pub nop: DMatrix<f64>,
    /// Projector onto mode 0.
    pub pi1v: DMatrix<f64>,
}

impl LadderSet {
    pub fn new(nv: usize, gamma: f64) -> Result<Self> {
        if nv < 2 {
            return Err(Error::invalid(
                "nv",
                format!("need at least 2 Hermite modes (got {nv}); the collision operator would be trivial"),
            ));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid("gamma", format!("must be > 0, got {gamma}")));
        }
        let mut b = DMatrix::zeros(nv, nv);
        let mut c = DMatrix::zeros(nv, nv);
        for k in 1..nv {
            b[(k - 1, k)] = (gamma * k as f64).sqrt();
            c[(k - 1, k)] = 1.0;
        }
        let bdag = b.transpose();
        let cdag = c.transpose();
        let nop = DMatrix::from_diagonal(&DVector::from_fn(nv, |k, _| gamma * k as f64));
        let mut pi1v = DMatrix::zeros(nv, nv);
        pi1v[(0, 0)] = 1.0;
        Ok(LadderSet {
            nv,
            gamma,
            b,
            bdag,
            c,
            cdag,
            nop,
            pi1v,
        })
    }

    /// Truncated multiplication by `v`, i.e. `γ^{-1/2}(b + b*)`.
    pub fn velocity_multiplication(&self) -> DMatrix<f64> {
        (&self.b + &self.bdag) / self.gamma.sqrt()
    }

    /// Truncated `∂_v = γ^{-1/2}(b - b*)/2`.
    pub fn velocity_derivative(&self) -> DMatrix<f64> {
        (&self.b - &self.bdag) / (2.0 * self.gamma.sqrt())
    }

    pub fn commutator(&self) -> DMatrix<f64> {
        &self.b * &self.bdag - &self.bdag * &self.b
    }
}
