//! The constant chain behind the decay certificate: norm bounds, the choice
//! of `ε`, the coercivity constant `δ`, and a direct check of the modified
//! quadratic form `Re(Ku, (I + ε(L + Lᵀ))u)` on `m₀⊥`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ladder::LadderSet;
use crate::linalg::dense;
use crate::linalg::lanczos::{self, LanczosOptions, Which};
use crate::phase::{PhaseOperator, PhaseSystem, Repr, DENSE_CAP};
use crate::spatial::SpatialOps;
use crate::spectral::{operator_norm, SpectralReport, SEED};

/// Prefactor of the decay envelope.
pub const PREFACTOR: f64 = 3.0;

/// `λ_min ≥ VERIFY_FRACTION · δ` marks a certificate as verified.
pub const VERIFY_FRACTION: f64 = 0.9;

/// Power-iteration settings for the measured norms.
pub const NORM_TOL: f64 = 1e-9;
pub const NORM_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub alpha: f64,
    pub tau: f64,
    pub gamma: f64,
    #[serde(rename = "normL_num")]
    pub norm_l_num: f64,
    #[serde(rename = "normA_num")]
    pub norm_a_num: f64,
    #[serde(rename = "boundL")]
    pub bound_l: f64,
    #[serde(rename = "boundA")]
    pub bound_a: f64,
    pub epsilon: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub delta: f64,
    #[serde(rename = "A_const")]
    pub a_const: f64,
    pub prefactor: f64,
    pub decay_rate: f64,
    pub lambda_min_verified: Option<f64>,
    pub verified: bool,
}

impl Certificate {
    /// `C_ℒ = max(1, ε‖L‖)`.
    pub fn c_l(&self) -> f64 {
        c_l(self.epsilon, self.norm_l_num)
    }
}

pub fn c_l(epsilon: f64, norm_l: f64) -> f64 {
    (epsilon * norm_l).max(1.0)
}

/// Closed-form bounds `(‖L‖, ‖𝒜‖)` from `γ` and the sup-norms of `V''`, `V'''`.
pub fn analytic_norm_bounds(gamma: f64, m2: f64, m3: f64) -> (f64, f64) {
    let bound_l = (1.0 + gamma * (m2 + 2.0)).sqrt();
    let b1 = (m2 + 1.0 + gamma.sqrt() * m3) * ((gamma * (m2 + 2.0)).sqrt() + 1.0) * bound_l;
    let b2 = (m2 + 1.0) * bound_l * bound_l;
    let b3 = m2;
    (bound_l, b1 + b2 + b3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonChoice {
    pub epsilon: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub delta: f64,
    #[serde(rename = "A_const")]
    pub a_const: f64,
}

/// Maximizes `εα/(1+γ) − ε²C` under `ε ≤ γ/8` and `ε‖L‖ ≤ 1`.
pub fn choose_epsilon(alpha: f64, gamma: f64, norm_l: f64, norm_a: f64) -> Result<EpsilonChoice> {
    if !(alpha > 0.0) {
        return Err(Error::NoSpectralGap(alpha));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma", format!("must be > 0, got {gamma}")));
    }
    if !(norm_l > 0.0) {
        return Err(Error::invalid("normL", format!("must be > 0, got {norm_l}")));
    }
    if !(norm_a >= 0.0) {
        return Err(Error::invalid("normA", format!("must be >= 0, got {norm_a}")));
    }
    let c = norm_a * norm_a / gamma + gamma * norm_l * norm_l;
    let epsilon = (gamma / 8.0).min(1.0 / norm_l).min(alpha / (2.0 * (1.0 + gamma) * c));
    let delta = epsilon * alpha / (1.0 + gamma) - epsilon * epsilon * c;
    Ok(EpsilonChoice {
        epsilon,
        c,
        delta,
        a_const: alpha * alpha / delta,
    })
}

/// `3‖u₀‖e^{−δt/(3C_ℒ)}`.
pub fn decay_envelope(delta: f64, c_l: f64, norm_u0: f64, t: f64) -> f64 {
    PREFACTOR * norm_u0 * (-delta * t / (PREFACTOR * c_l)).exp()
}

fn rank_one_vector(pi0: &PhaseOperator) -> Result<&DVector<f64>> {
    match &pi0.repr {
        Repr::RankOne(m) => Ok(m),
        _ => Err(Error::DimensionMismatch("Pi0 must be a rank-one projector".into())),
    }
}

/// Smallest eigenvalue of the symmetrized form `S = (MK + KᵀM)/2`,
/// `M = I + ε(L + Lᵀ)`, over unit `u ⊥ m₀` supported on the coordinates `keep`.
///
/// Passing `keep` smaller than the full index set evaluates the form on a
/// subspace while `K` and `L` still act on the larger space; with one guard
/// velocity mode this removes the truncation defect of the top Hermite mode.
/// Dense eigensolve up to [`DENSE_CAP`] retained coordinates, Lanczos above.
pub fn verify_coercivity(
    k: &PhaseOperator,
    l: &PhaseOperator,
    epsilon: f64,
    pi0: &PhaseOperator,
    keep: &[usize],
) -> Result<f64> {
    let n = k.n;
    if l.n != n || pi0.n != n {
        return Err(Error::DimensionMismatch("K, L and Pi0 must share a dimension".into()));
    }
    let m0_full = rank_one_vector(pi0)?;
    let m = keep.len();
    let m0 = DVector::from_iterator(m, keep.iter().map(|&i| m0_full[i]));
    if m <= DENSE_CAP && n <= DENSE_CAP + DENSE_CAP / 4 {
        let kd = k.to_dense()?;
        let ld = l.to_dense()?;
        let mut mm = &ld + ld.transpose();
        mm *= epsilon;
        for i in 0..n {
            mm[(i, i)] += 1.0;
        }
        let mk = &mm * &kd;
        let s_full = (&mk + mk.transpose()) * 0.5;
        let s = DMatrix::from_fn(m, m, |i, j| s_full[(keep[i], keep[j])]);
        let p = DMatrix::identity(m, m) - &m0 * m0.transpose();
        let mut form = &p * s * &p;
        let shift = 1.0 + 10.0 * form.iter().fold(0.0f64, |a, &x| a.max(x.abs())) * (m as f64).sqrt();
        form += &m0 * m0.transpose() * shift;
        let ev = dense::symmetric_eigenvalues(&form)?;
        return Ok(ev[0]);
    }
    let extend = |u: &DVector<f64>| {
        let mut x = DVector::zeros(n);
        for (j, &i) in keep.iter().enumerate() {
            x[i] = u[j];
        }
        x
    };
    let apply_m = |x: &DVector<f64>| x + (l.apply(x) + l.apply_transpose(x)) * epsilon;
    let apply = |u: &DVector<f64>| {
        let x = extend(u);
        let y = (apply_m(&k.apply(&x)) + k.apply_transpose(&apply_m(&x))) * 0.5;
        DVector::from_iterator(m, keep.iter().map(|&i| y[i]))
    };
    let opts = LanczosOptions {
        wanted: 1,
        which: Which::Smallest,
        tol: 1e-8,
        max_iter: 3000,
        seed: SEED,
        check_every: 20,
    };
    let r = lanczos::eigs(m, apply, std::slice::from_ref(&m0), &opts)?;
    Ok(r.values[0])
}

/// Operators for the guarded coercivity check: `nv + 1` velocity modes, with
/// the top mode excluded from the test space.
pub struct GuardedForm {
    pub system: PhaseSystem,
    pub keep: Vec<usize>,
}

impl GuardedForm {
    pub fn new(sp: &SpatialOps, nv: usize, gamma: f64) -> Result<Self> {
        let ls = LadderSet::new(nv + 1, gamma)?;
        let system = PhaseSystem::new(sp, &ls)?;
        let keep = (0..system.nx)
            .flat_map(|i| (0..nv).map(move |k| i * (nv + 1) + k))
            .collect();
        Ok(GuardedForm { system, keep })
    }

    pub fn lambda_min(&self, epsilon: f64) -> Result<f64> {
        let s = &self.system;
        verify_coercivity(&s.assemble_k(), &s.assemble_l(), epsilon, &s.projector_pi0(), &self.keep)
    }
}

/// Measured norms of `L` and `𝒜` by power iteration.
pub fn measured_norms(sys: &PhaseSystem) -> Result<(f64, f64)> {
    let l = operator_norm(&sys.assemble_l(), NORM_TOL, NORM_MAX_ITER)?;
    let a = operator_norm(&sys.assemble_a_operator(), NORM_TOL, NORM_MAX_ITER)?;
    Ok((l.value, a.value))
}

/// Assembles the certificate from the spectral report and measured norms.
/// `lambda_min` is the verified form minimum when it has been computed.
pub fn build_certificate(
    spectral: &SpectralReport,
    norm_l: f64,
    norm_a: f64,
    m2: f64,
    m3: f64,
    lambda_min: Option<f64>,
) -> Result<Certificate> {
    let gamma = spectral.gamma;
    let (bound_l, bound_a) = analytic_norm_bounds(gamma, m2, m3);
    let choice = choose_epsilon(spectral.alpha, gamma, norm_l, norm_a)?;
    let cl = c_l(choice.epsilon, norm_l);
    Ok(Certificate {
        alpha: spectral.alpha,
        tau: spectral.tau,
        gamma,
        norm_l_num: norm_l,
        norm_a_num: norm_a,
        bound_l,
        bound_a,
        epsilon: choice.epsilon,
        c: choice.c,
        delta: choice.delta,
        a_const: choice.a_const,
        prefactor: PREFACTOR,
        decay_rate: choice.delta / (PREFACTOR * cl),
        lambda_min_verified: lambda_min,
        verified: lambda_min.is_some_and(|l| l >= VERIFY_FRACTION * choice.delta),
    })
}

/// Smallest margin of `(Λ⁻²(W ⊗ I)Π₁u, Π₁u) − α/(1+γ)‖Π₁u‖²` over seeded
/// random unit `u ⊥ m₀`.
pub fn macroscopic_coercivity_margin(sys: &PhaseSystem, alpha: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi1 = sys.projector_pi1();
    let w_op = &sys.adag * &sys.a;
    let solver = sys.lambda2_solver();
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let mut u = DVector::from_fn(sys.n, |_, _| StandardNormal.sample(&mut rng));
        u -= &sys.m0 * sys.m0.dot(&u);
        u /= u.norm();
        let p = pi1.apply(&u);
        let lhs = solver
            .apply_inverse(&crate::linalg::sparse::matvec(&w_op, &p))
            .dot(&p);
        let rhs = alpha / (1.0 + sys.gamma()) * p.norm_squared();
        worst = worst.min(lhs - rhs);
    }
    worst
}
