//! Phase-space operators on the tensor grid (position nodes × Hermite modes).
//!
//! Phase index is x-major: `i·nv + k` for node `i` and velocity mode `k`.
//! Position factors act on the first tensor slot, velocity factors on the
//! second, so `a = A ⊗ I`, `b = I ⊗ B`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};
use crate::ladder::LadderSet;
use crate::linalg::{dense, sparse};
use crate::spatial::SpatialOps;

/// Largest dimension for which dense materialization is allowed.
pub const DENSE_CAP: usize = 4096;

/// Relative residual used by the composed operators' internal `Λ⁻²` solves.
pub const INNER_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    X0,
    K,
    Lambda2,
    Pi1,
    Pi0,
    L,
    Aop,
    Custom,
}

/// A matrix-free linear map with a transpose.
pub trait LinearMap: Send + Sync {
    fn apply(&self, u: &DVector<f64>) -> DVector<f64>;
    fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64>;
}

#[derive(Clone)]
pub enum Repr {
    Sparse(CsrMatrix<f64>),
    /// `u ↦ (u·m)m` for a unit vector `m`.
    RankOne(DVector<f64>),
    Composed(Arc<dyn LinearMap>),
}

#[derive(Clone)]
pub struct PhaseOperator {
    pub role: Role,
    pub n: usize,
    pub repr: Repr,
}

impl fmt::Debug for PhaseOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.repr {
            Repr::Sparse(m) => format!("sparse, nnz = {}", m.nnz()),
            Repr::RankOne(_) => "rank one".to_string(),
            Repr::Composed(_) => "composed".to_string(),
        };
        write!(f, "PhaseOperator({:?}, n = {}, {kind})", self.role, self.n)
    }
}

impl PhaseOperator {
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            Repr::Sparse(m) => sparse::matvec(m, u),
            Repr::RankOne(m) => m * m.dot(u),
            Repr::Composed(op) => op.apply(u),
        }
    }

    pub fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            Repr::Sparse(m) => sparse::matvec_t(m, u),
            Repr::RankOne(m) => m * m.dot(u),
            Repr::Composed(op) => op.apply_transpose(u),
        }
    }

    pub fn sparse(&self) -> Option<&CsrMatrix<f64>> {
        match &self.repr {
            Repr::Sparse(m) => Some(m),
            _ => None,
        }
    }

    /// Dense matrix; refused above [`DENSE_CAP`].
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.n > DENSE_CAP {
            return Err(Error::SizeCap {
                what: "dense materialization",
                n: self.n,
                cap: DENSE_CAP,
            });
        }
        Ok(match &self.repr {
            Repr::Sparse(m) => sparse::to_dense(m),
            Repr::RankOne(m) => m * m.transpose(),
            Repr::Composed(op) => {
                let mut out = DMatrix::zeros(self.n, self.n);
                let mut e = DVector::zeros(self.n);
                for j in 0..self.n {
                    e[j] = 1.0;
                    out.set_column(j, &op.apply(&e));
                    e[j] = 0.0;
                }
                out
            }
        })
    }

    /// Writes the operator in Matrix Market coordinate format.
    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        let entries: Vec<(usize, usize, f64)> = match &self.repr {
            Repr::Sparse(m) => m.triplet_iter().map(|(i, j, &v)| (i, j, v)).collect(),
            _ => {
                let d = self.to_dense()?;
                let mut t = Vec::new();
                for i in 0..self.n {
                    for j in 0..self.n {
                        if d[(i, j)] != 0.0 {
                            t.push((i, j, d[(i, j)]));
                        }
                    }
                }
                t
            }
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(f, "% role {:?}", self.role)?;
        writeln!(f, "{} {} {}", self.n, self.n, entries.len())?;
        for (i, j, v) in entries {
            writeln!(f, "{} {} {:.16e}", i + 1, j + 1, v)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Reshapes an x-major phase vector into an `nx × nv` matrix.
fn to_grid(u: &DVector<f64>, nx: usize, nv: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(nx, nv, u.as_slice())
}

fn from_grid(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.transpose().as_slice())
}

/// Direct solver for `Λ² = I + W ⊗ I + I ⊗ N`.
///
/// `Λ²` is diagonal in the basis `eigvec(W) ⊗ e_k`, so one eigendecomposition
/// of the `nx × nx` matrix `W` gives the inverse in `O(nx²·nv)` per apply;
/// a few refinement sweeps against the sparse `Λ²` polish the residual.
#[derive(Debug, Clone)]
pub struct Lambda2Solver {
    nx: usize,
    nv: usize,
    gamma: f64,
    q: DMatrix<f64>,
    qt: DMatrix<f64>,
    w_eigs: Vec<f64>,
    l2: CsrMatrix<f64>,
}

impl Lambda2Solver {
    fn new(sp: &SpatialOps, ls: &LadderSet, l2: CsrMatrix<f64>) -> Result<Self> {
        let (w_eigs, q) = dense::symmetric_eigen(&sp.w)?;
        Ok(Lambda2Solver {
            nx: sp.nx(),
            nv: ls.nv,
            gamma: ls.gamma,
            qt: q.transpose(),
            q,
            w_eigs,
            l2,
        })
    }

    /// Eigenvalues of `W` (ascending) used by the diagonalization.
    pub fn w_eigenvalues(&self) -> &[f64] {
        &self.w_eigs
    }

    fn diagonal_solve(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut y = &self.qt * to_grid(u, self.nx, self.nv);
        for k in 0..self.nv {
            let nk = self.gamma * k as f64;
            for j in 0..self.nx {
                y[(j, k)] /= 1.0 + self.w_eigs[j] + nk;
            }
        }
        from_grid(&(&self.q * y))
    }

    /// Solves `Λ² y = u` to relative residual `rtol`.
    pub fn solve(&self, u: &DVector<f64>, rtol: f64) -> Result<DVector<f64>> {
        let norm = u.norm();
        if norm == 0.0 {
            return Ok(DVector::zeros(u.len()));
        }
        let mut y = self.diagonal_solve(u);
        let mut res = f64::INFINITY;
        for _ in 0..8 {
            let r = u - sparse::matvec(&self.l2, &y);
            res = r.norm() / norm;
            if res <= rtol {
                return Ok(y);
            }
            y += self.diagonal_solve(&r);
        }
        Err(Error::NoConvergence {
            what: "inverse of Lambda^2",
            iterations: 8,
            residual: res,
        })
    }

    /// Best-effort solve used inside composed operators.
    pub fn apply_inverse(&self, u: &DVector<f64>) -> DVector<f64> {
        match self.solve(u, INNER_RTOL) {
            Ok(y) => y,
            Err(_) => {
                let y = self.diagonal_solve(u);
                let r = u - sparse::matvec(&self.l2, &y);
                y + self.diagonal_solve(&r)
            }
        }
    }
}

/// All phase-space pieces for one `(SpatialOps, LadderSet)` pair.
#[derive(Debug, Clone)]
pub struct PhaseSystem {
    pub sp: SpatialOps,
    pub ls: LadderSet,
    pub nx: usize,
    pub nv: usize,
    pub n: usize,
    /// Discrete `M^{1/2}` = `φ₀ ⊗ e₀`, unit norm.
    pub m0: DVector<f64>,
    /// `A ⊗ I`
    pub a: CsrMatrix<f64>,
    /// `Aᵀ ⊗ I`
    pub adag: CsrMatrix<f64>,
    /// `I ⊗ B`
    pub b: CsrMatrix<f64>,
    /// `I ⊗ Bᵀ`
    pub bdag: CsrMatrix<f64>,
    /// `diag(V'') ⊗ I`
    pub hess: CsrMatrix<f64>,
    solver: Arc<Lambda2Solver>,
}

impl PhaseSystem {
    pub fn new(sp: &SpatialOps, ls: &LadderSet) -> Result<Self> {
        if (sp.gamma - ls.gamma).abs() > 1e-15 * sp.gamma.max(1.0) {
            return Err(Error::DimensionMismatch(format!(
                "spatial operators built with gamma = {} but ladder with gamma = {}",
                sp.gamma, ls.gamma
            )));
        }
        let (nx, nv) = (sp.nx(), ls.nv);
        let ix = sparse::identity(nx);
        let iv = sparse::identity(nv);
        let a = sparse::kron(&sparse::from_dense(&sp.a), &iv);
        let adag = sparse::kron(&sparse::from_dense(&sp.adag), &iv);
        let b = sparse::kron(&ix, &sparse::from_dense(&ls.b));
        let bdag = sparse::kron(&ix, &sparse::from_dense(&ls.bdag));
        let hess = sparse::kron(&sparse::from_diagonal(sp.hessian_diag().as_slice()), &iv);
        let mut e0 = DVector::zeros(nv);
        e0[0] = 1.0;
        let m0 = sp.phi0.kronecker(&e0);
        let l2 = lambda2_matrix(sp, ls);
        let solver = Arc::new(Lambda2Solver::new(sp, ls, l2)?);
        Ok(PhaseSystem {
            sp: sp.clone(),
            ls: ls.clone(),
            nx,
            nv,
            n: nx * nv,
            m0,
            a,
            adag,
            b,
            bdag,
            hess,
            solver,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.ls.gamma
    }

    pub fn lambda2_solver(&self) -> &Lambda2Solver {
        &self.solver
    }

    fn op(&self, role: Role, m: CsrMatrix<f64>) -> PhaseOperator {
        PhaseOperator {
            role,
            n: self.n,
            repr: Repr::Sparse(m),
        }
    }

    fn transport_matrix(&self) -> CsrMatrix<f64> {
        let a = sparse::from_dense(&self.sp.a);
        let adag = sparse::from_dense(&self.sp.adag);
        let b = sparse::from_dense(&self.ls.b);
        let bdag = sparse::from_dense(&self.ls.bdag);
        let x0 = &sparse::kron(&a, &bdag) - &sparse::kron(&adag, &b);
        x0 / self.gamma()
    }

    fn pi1_matrix(&self) -> CsrMatrix<f64> {
        sparse::kron(&sparse::identity(self.nx), &sparse::from_dense(&self.ls.pi1v))
    }

    /// `X₀ = γ⁻¹(A ⊗ Bᵀ − Aᵀ ⊗ B)`.
    pub fn assemble_transport(&self) -> PhaseOperator {
        self.op(Role::X0, self.transport_matrix())
    }

    /// `K = X₀ + γ(I − I ⊗ Π₁)`.
    pub fn assemble_k(&self) -> PhaseOperator {
        let collision = (&sparse::identity(self.n) - &self.pi1_matrix()) * self.gamma();
        self.op(Role::K, &self.transport_matrix() + &collision)
    }

    pub fn assemble_lambda2(&self) -> PhaseOperator {
        self.op(Role::Lambda2, self.solver.l2.clone())
    }

    pub fn projector_pi1(&self) -> PhaseOperator {
        self.op(Role::Pi1, self.pi1_matrix())
    }

    pub fn projector_pi0(&self) -> PhaseOperator {
        PhaseOperator {
            role: Role::Pi0,
            n: self.n,
            repr: Repr::RankOne(self.m0.clone()),
        }
    }

    /// Solves `Λ² y = u` with `‖Λ²y − u‖ ≤ rtol‖u‖`.
    pub fn apply_inverse_lambda2(&self, u: &DVector<f64>, rtol: f64) -> Result<DVector<f64>> {
        if !(rtol > 0.0 && rtol <= 1e-8) {
            return Err(Error::invalid("rtol", format!("must lie in (0, 1e-8], got {rtol}")));
        }
        if u.len() != self.n {
            return Err(Error::DimensionMismatch(format!("vector of length {} for n = {}", u.len(), self.n)));
        }
        self.solver.solve(u, rtol)
    }

    /// `L = Λ⁻²(Aᵀ ⊗ B)`, applied through the solver.
    pub fn assemble_l(&self) -> PhaseOperator {
        let map = LMap {
            adag_b: &self.adag * &self.b,
            solver: self.solver.clone(),
        };
        PhaseOperator {
            role: Role::L,
            n: self.n,
            repr: Repr::Composed(Arc::new(map)),
        }
    }

    /// `𝒜 = Λ⁻²b*(V''−1)aΛ⁻²a*b + Λ⁻²a*(V''−1)bΛ⁻²a*b − Λ⁻²b*V''b`.
    pub fn assemble_a_operator(&self) -> PhaseOperator {
        let shifted = &self.hess - &sparse::identity(self.n);
        let map = AMap {
            adag_b: &self.adag * &self.b,
            mixed: &(&(&self.bdag * &shifted) * &self.a) + &(&(&self.adag * &shifted) * &self.b),
            diag_term: &(&self.bdag * &self.hess) * &self.b,
            solver: self.solver.clone(),
        };
        PhaseOperator {
            role: Role::Aop,
            n: self.n,
            repr: Repr::Composed(Arc::new(map)),
        }
    }

    /// Smooth test vector `e^{-x²/4}(1+x) · 0.5^k/√k!` used by the residual report.
    pub fn smooth_test_vector(&self) -> DVector<f64> {
        let mut u = DVector::zeros(self.n);
        for i in 0..self.nx {
            let x = self.sp.grid.node(i);
            let g = (-x * x / 4.0).exp() * (1.0 + x);
            let mut c = 1.0;
            for k in 0..self.nv {
                if k > 0 {
                    c *= 0.5 / (k as f64).sqrt();
                }
                u[i * self.nv + k] = g * c;
            }
        }
        u
    }

    /// Norm of `r` over interior nodes `2..nx-2` and modes `< nv-1`.
    pub fn restricted_norm(&self, r: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for i in 2..self.nx - 2 {
            for k in 0..self.nv - 1 {
                s += r[i * self.nv + k].powi(2);
            }
        }
        s.sqrt()
    }

    /// Residuals of the discrete commutator identities on the smooth test vector.
    pub fn commutator_residuals(&self) -> CommutatorReport {
        let u = self.smooth_test_vector();
        let norm = u.norm();
        let gamma = self.gamma();
        let x0 = self.transport_matrix();
        let l2 = &self.solver.l2;
        let comm = |p: &CsrMatrix<f64>, q: &CsrMatrix<f64>| -> CsrMatrix<f64> { &(p * q) - &(q * p) };
        let measure = |m: &CsrMatrix<f64>| self.restricted_norm(&sparse::matvec(m, &u)) / norm;

        let b_x0 = &comm(&self.b, &x0) - &self.a;
        let a_x0 = &comm(&self.a, &x0) + &(&self.hess * &self.b);
        let shifted = &self.hess - &sparse::identity(self.n);
        let l2_x0 = &(&comm(l2, &x0) + &(&(&self.bdag * &shifted) * &self.a)) + &(&(&self.adag * &shifted) * &self.b);
        let l2_b = &comm(l2, &self.b) + &(&self.b * gamma);
        let b_bdag = &comm(&self.b, &self.bdag) - &(sparse::identity(self.n) * gamma);

        CommutatorReport {
            b_x0_minus_a: measure(&b_x0),
            a_x0_plus_hess_b: measure(&a_x0),
            lambda2_x0: measure(&l2_x0),
            lambda2_b_plus_gamma_b: measure(&l2_b),
            b_bdag_minus_gamma: measure(&b_bdag),
        }
    }
}

/// Relative residual norms of the commutator identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommutatorReport {
    /// `[b, X₀] − a`
    pub b_x0_minus_a: f64,
    /// `[a, X₀] + V''b`
    pub a_x0_plus_hess_b: f64,
    /// `[Λ², X₀] + b*(V''−1)a + a*(V''−1)b`
    pub lambda2_x0: f64,
    /// `[Λ², b] + γb`
    pub lambda2_b_plus_gamma_b: f64,
    /// `[b, b*] − γ`
    pub b_bdag_minus_gamma: f64,
}

fn lambda2_matrix(sp: &SpatialOps, ls: &LadderSet) -> CsrMatrix<f64> {
    let (nx, nv) = (sp.nx(), ls.nv);
    let w = sparse::kron(&sparse::from_dense(&sp.w), &sparse::identity(nv));
    let nop = sparse::kron(&sparse::identity(nx), &sparse::from_dense(&ls.nop));
    &(&sparse::identity(nx * nv) + &w) + &nop
}

struct LMap {
    adag_b: CsrMatrix<f64>,
    solver: Arc<Lambda2Solver>,
}

impl LinearMap for LMap {
    fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        self.solver.apply_inverse(&sparse::matvec(&self.adag_b, u))
    }

    fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64> {
        sparse::matvec_t(&self.adag_b, &self.solver.apply_inverse(u))
    }
}

struct AMap {
    adag_b: CsrMatrix<f64>,
    mixed: CsrMatrix<f64>,
    diag_term: CsrMatrix<f64>,
    solver: Arc<Lambda2Solver>,
}

impl LinearMap for AMap {
    fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        let z = self.solver.apply_inverse(&sparse::matvec(&self.adag_b, u));
        let t = sparse::matvec(&self.mixed, &z) - sparse::matvec(&self.diag_term, u);
        self.solver.apply_inverse(&t)
    }

    fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64> {
        let y = self.solver.apply_inverse(u);
        let z = self.solver.apply_inverse(&sparse::matvec_t(&self.mixed, &y));
        sparse::matvec_t(&self.adag_b, &z) - sparse::matvec_t(&self.diag_term, &y)
    }
}

/// `v ∂_x − V' ∂_v` discretized directly: centered `D` in position and the
/// Hermite-basis multiplication and derivative matrices in velocity.
pub fn transport_direct(sp: &SpatialOps, ls: &LadderSet) -> CsrMatrix<f64> {
    let nx = sp.nx();
    let h = sp.grid.h;
    let d = DMatrix::from_fn(nx, nx, |i, j| {
        if j == i + 1 {
            0.5 / h
        } else if i == j + 1 {
            -0.5 / h
        } else {
            0.0
        }
    });
    let v1: Vec<f64> = (0..nx).map(|i| sp.potential.eval_v1(sp.grid.node(i))).collect();
    let vmul = sparse::from_dense(&ls.velocity_multiplication());
    let dv = sparse::from_dense(&ls.velocity_derivative());
    &sparse::kron(&sparse::from_dense(&d), &vmul) - &sparse::kron(&sparse::from_diagonal(&v1), &dv)
}
