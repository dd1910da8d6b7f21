//! Position-space operators: the discrete `a = γ^{1/2}(∂_x + V'/2)`, its
//! transpose, the Witten Laplacian `W = aᵀa` and the ground state `φ₀`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dense, tridiag};
use crate::potential::Potential;

/// Largest admissible `e^{-V(±R)/2}`.
pub const BOUNDARY_WEIGHT_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    pub radius: f64,
    pub nx: usize,
    pub h: f64,
}

impl SpatialGrid {
    pub fn new(radius: f64, nx: usize) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid("R", format!("must be > 0, got {radius}")));
        }
        if nx < 8 {
            return Err(Error::invalid("nx", format!("need at least 8 nodes, got {nx}")));
        }
        Ok(SpatialGrid {
            radius,
            nx,
            h: 2.0 * radius / (nx - 1) as f64,
        })
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.radius + i as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.node(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exact-kernel weighted forward difference.
    #[default]
    Mimetic,
    /// Second-order centered difference, no exact kernel.
    Centered,
}

#[derive(Debug, Clone)]
pub struct SpatialOps {
    pub grid: SpatialGrid,
    pub scheme: Scheme,
    pub gamma: f64,
    pub potential: Potential,
    pub a: DMatrix<f64>,
    pub adag: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// Unit ground state of `W` with positive sum.
    pub phi0: DVector<f64>,
}

/// `e^{-V(x_i)/2}` normalized in ℓ².
pub fn maxwellian_profile(grid: &SpatialGrid, p: &Potential) -> DVector<f64> {
    let v = DVector::from_fn(grid.nx, |i, _| (-0.5 * p.eval_v(grid.node(i))).exp());
    let n = v.norm();
    v / n
}

/// `max(e^{-V(-R)/2}, e^{-V(R)/2})`, the size of `M^{1/2}` at the truncation edges.
pub fn boundary_weight(radius: f64, p: &Potential) -> f64 {
    (-0.5 * p.eval_v(-radius)).exp().max((-0.5 * p.eval_v(radius)).exp())
}

pub fn build_spatial_ops(grid: SpatialGrid, p: &Potential, gamma: f64, scheme: Scheme) -> Result<SpatialOps> {
    p.validate()?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid("gamma", format!("must be > 0, got {gamma}")));
    }
    let weight = boundary_weight(grid.radius, p);
    if !(weight < BOUNDARY_WEIGHT_LIMIT) {
        return Err(Error::TruncationTooSmall {
            weight,
            limit: BOUNDARY_WEIGHT_LIMIT,
        });
    }
    let nx = grid.nx;
    let h = grid.h;
    let sg = gamma.sqrt();
    let mut a = DMatrix::zeros(nx, nx);
    match scheme {
        Scheme::Mimetic => {
            for i in 0..nx - 1 {
                let r = ((p.eval_v(grid.node(i + 1)) - p.eval_v(grid.node(i))) / 4.0).exp();
                a[(i, i + 1)] = sg * r / h;
                a[(i, i)] = -sg / (r * h);
            }
        }
        Scheme::Centered => {
            for i in 0..nx {
                if i + 1 < nx {
                    a[(i, i + 1)] = sg / (2.0 * h);
                }
                if i > 0 {
                    a[(i, i - 1)] = -sg / (2.0 * h);
                }
                a[(i, i)] = sg * 0.5 * p.eval_v1(grid.node(i));
            }
        }
    }
    let adag = a.transpose();
    let w = &adag * &a;
    let mut ops = SpatialOps {
        grid,
        scheme,
        gamma,
        potential: *p,
        a,
        adag,
        w,
        phi0: DVector::zeros(nx),
    };
    ops.phi0 = match scheme {
        Scheme::Mimetic => maxwellian_profile(&grid, p),
        Scheme::Centered => lowest_eigenpair(&ops)?.1,
    };
    Ok(ops)
}

impl SpatialOps {
    pub fn nx(&self) -> usize {
        self.grid.nx
    }

    /// Diagonal and off-diagonal of `W` when it is tridiagonal (mimetic scheme).
    fn tridiagonal(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.scheme != Scheme::Mimetic {
            return None;
        }
        let n = self.nx();
        let d = (0..n).map(|i| self.w[(i, i)]).collect();
        let e = (0..n - 1).map(|i| self.w[(i + 1, i)]).collect();
        Some((d, e))
    }

    /// The `m` smallest eigenvalues of `W`, ascending.
    pub fn smallest_w_eigenvalues(&self, m: usize) -> Result<Vec<f64>> {
        match self.tridiagonal() {
            Some((d, e)) => Ok(tridiag::smallest_eigenvalues(&d, &e, m)),
            None => {
                let mut ev = dense::symmetric_eigenvalues(&self.w)?;
                ev.truncate(m);
                Ok(ev)
            }
        }
    }

    /// `V''(x_i)` at the nodes.
    pub fn hessian_diag(&self) -> DVector<f64> {
        DVector::from_fn(self.nx(), |i, _| self.potential.eval_v2(self.grid.node(i)))
    }

    /// `‖([A, Aᵀ] − γV'')u‖ / ‖u‖` over interior nodes `2..nx-2`.
    pub fn commutator_residual(&self, u: &DVector<f64>) -> f64 {
        let comm = &self.a * &self.adag - &self.adag * &self.a;
        let mut r = comm * u;
        let v2 = self.hessian_diag();
        for i in 0..self.nx() {
            r[i] -= self.gamma * v2[i] * u[i];
        }
        let n = self.nx();
        let interior = r.rows(2, n - 4).norm();
        interior / u.norm()
    }
}

fn lowest_eigenpair(ops: &SpatialOps) -> Result<(f64, DVector<f64>)> {
    let (lambda0, mut phi) = match ops.tridiagonal() {
        Some((d, e)) => {
            let l = tridiag::kth_eigenvalue(&d, &e, 0);
            (l, DVector::from_vec(tridiag::eigenvector(&d, &e, l)))
        }
        None => {
            let (vals, vecs) = dense::symmetric_eigen(&ops.w)?;
            (vals[0], vecs.column(0).into_owned())
        }
    };
    phi /= phi.norm();
    if phi.sum() < 0.0 {
        phi = -phi;
    }
    Ok((lambda0, phi))
}

/// Smallest eigenpair of `W`: `(λ₀, φ₀)`.
pub fn discrete_ground_state(ops: &SpatialOps) -> Result<(f64, DVector<f64>)> {
    let (lambda0, phi) = lowest_eigenpair(ops)?;
    if ops.scheme == Scheme::Mimetic {
        // the kernel is known in closed form; keep the exact vector
        return Ok((lambda0, ops.phi0.clone()));
    }
    Ok((lambda0, phi))
}

/// Spectral gap `τ` of `W` above its lowest eigenvalue.
pub fn witten_gap(ops: &SpatialOps) -> Result<f64> {
    let ev = ops.smallest_w_eigenvalues(2)?;
    Ok((ev[1] - ev[0]).max(0.0))
}
