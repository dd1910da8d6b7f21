//! Time integration of `∂ₜu + Ku = 0`, decay traces, rate fitting and the
//! relative entropy of the reconstructed distribution.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::certificate::decay_envelope;
use crate::error::{Error, Result};
use crate::linalg::banded::BandedLu;
use crate::linalg::dense;
use crate::linalg::sparse;
use crate::phase::{PhaseOperator, PhaseSystem};
use crate::spatial::Scheme;

/// Largest dimension for the dense matrix exponential.
pub const EXPM_CAP: usize = 2048;
/// Entropy clipping floor for the reconstructed `f/M^{1/2}`.
pub const ENTROPY_FLOOR: f64 = 1e-14;
/// Clipped-mass fraction above which the entropy is reported as unreliable.
pub const CLIP_LIMIT: f64 = 1e-6;
/// Relative slack of the per-step contraction check.
pub const CONTRACTION_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: DVector<f64>,
    pub t: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialKind {
    ShiftedMaxwellian { x0: f64, v0: f64, sigma: f64 },
    ModePerturbation { eta: f64, mode: usize },
    Random { eta: f64, seed: u64 },
}

impl Default for InitialKind {
    fn default() -> Self {
        InitialKind::ShiftedMaxwellian {
            x0: 1.0,
            v0: 0.5,
            sigma: 1.0,
        }
    }
}

fn normalized_state(u: DVector<f64>, m0: &DVector<f64>) -> Result<State> {
    let mass = u.dot(m0);
    if !(mass > 0.0) {
        return Err(Error::invalid(
            "init",
            format!("initial mass (u0, m0) = {mass:.3e} must be positive"),
        ));
    }
    let u = u / mass;
    let mass = u.dot(m0);
    Ok(State { u, t: 0.0, mass })
}

/// Hermite coefficients of `e^{-(v-v0)²/2} / μ^{1/2}` up to a constant:
/// `c_k = v0^k / √k!`.
pub fn shifted_velocity_coefficients(v0: f64, nv: usize) -> DVector<f64> {
    let mut c = DVector::zeros(nv);
    c[0] = 1.0;
    for k in 1..nv {
        c[k] = c[k - 1] * v0 / (k as f64).sqrt();
    }
    c
}

pub fn make_initial(kind: &InitialKind, sys: &PhaseSystem) -> Result<State> {
    let (nx, nv) = (sys.nx, sys.nv);
    match *kind {
        InitialKind::ShiftedMaxwellian { x0, v0, sigma } => {
            if !(sigma > 0.0) || !x0.is_finite() || !v0.is_finite() {
                return Err(Error::invalid("init.sigma", format!("need sigma > 0 and finite shifts, got sigma = {sigma}")));
            }
            let p = &sys.sp.potential;
            let grid = &sys.sp.grid;
            let log_g: Vec<f64> = (0..nx)
                .map(|i| {
                    let x = grid.node(i);
                    -(x - x0).powi(2) / (2.0 * sigma * sigma) + 0.5 * p.eval_v(x)
                })
                .collect();
            let peak = log_g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let g = DVector::from_iterator(nx, log_g.iter().map(|l| (l - peak).exp()));
            let r = grid.radius;
            let edge = (-(r - x0.abs()).powi(2) / (2.0 * sigma * sigma)).exp();
            if edge > 1e-6 {
                return Err(Error::invalid(
                    "init.sigma",
                    format!("initial density is not truncated inside [-R, R] (edge weight {edge:.2e})"),
                ));
            }
            let c = shifted_velocity_coefficients(v0, nv);
            normalized_state(g.kronecker(&c), &sys.m0)
        }
        InitialKind::ModePerturbation { eta, mode } => {
            if mode >= nv {
                return Err(Error::invalid("init.mode", format!("mode {mode} outside 0..{nv}")));
            }
            let mut e = DVector::zeros(nv);
            e[mode] = 1.0;
            let xphi = DVector::from_fn(nx, |i, _| sys.sp.grid.node(i) * sys.sp.phi0[i]);
            let mut p = xphi.kronecker(&e);
            p -= &sys.m0 * sys.m0.dot(&p);
            p /= p.norm();
            normalized_state(&sys.m0 + p * eta, &sys.m0)
        }
        InitialKind::Random { eta, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: DVector<f64> = DVector::from_fn(sys.n, |_, _| StandardNormal.sample(&mut rng));
            let gn = g.norm();
            normalized_state(&sys.m0 + g * (eta / gn), &sys.m0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    CrankNicolson,
    BackwardEuler,
    DenseExpm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub dev: f64,
    pub entropy: Option<f64>,
    pub envelope: f64,
    pub mass: f64,
    /// `‖u(t)‖`; kept for the entropy bounds, not written to CSV.
    pub norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecayTrace {
    pub rows: Vec<TraceRow>,
    /// Largest `|mass(t) − mass(0)|` over every step, recorded or not.
    pub max_mass_drift: f64,
    /// Largest clipped-mass fraction seen by the entropy evaluation.
    pub max_clipped_fraction: f64,
    pub final_state: Option<DVector<f64>>,
}

impl DecayTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,dev,entropy,envelope,mass\n");
        for r in &self.rows {
            let h = match r.entropy {
                Some(h) => format!("{h:.16e}"),
                None => "nan".to_string(),
            };
            out.push_str(&format!("{:.16e},{:.16e},{},{:.16e},{:.16e}\n", r.t, r.dev, h, r.envelope, r.mass));
        }
        out
    }
}

/// Gauss–Hermite rule for the standard normal weight (nodes, weights summing to 1).
pub fn gauss_hermite(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::invalid("quad_order", "must be positive"));
    }
    let jac = DMatrix::from_fn(order, order, |i, j| {
        if i + 1 == j {
            (j as f64).sqrt()
        } else if j + 1 == i {
            (i as f64).sqrt()
        } else {
            0.0
        }
    });
    let (nodes, vecs) = dense::symmetric_eigen(&jac)?;
    let weights = (0..order).map(|j| vecs[(0, j)].powi(2)).collect();
    Ok((nodes, weights))
}

/// Orthonormal probabilists' Hermite polynomials `p_0..p_{n-1}` at `v`.
pub fn hermite_values(v: f64, n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    p[0] = 1.0;
    if n > 1 {
        p[1] = v;
    }
    for k in 1..n.saturating_sub(1) {
        p[k + 1] = (v * p[k] - (k as f64).sqrt() * p[k - 1]) / ((k + 1) as f64).sqrt();
    }
    p
}

/// Precomputed quadrature for repeated entropy evaluation.
#[derive(Debug, Clone)]
pub struct EntropyRule {
    nv: usize,
    weights: Vec<f64>,
    /// `p_k(v_q)`, row `q`.
    basis: DMatrix<f64>,
    phi0: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyValue {
    pub h: f64,
    pub clipped_fraction: f64,
    /// Clipped mass above [`CLIP_LIMIT`]: the reconstructed `f` is sign-indefinite.
    pub flagged: bool,
}

impl EntropyRule {
    pub fn new(sys: &PhaseSystem, quad_order: usize) -> Result<Self> {
        if quad_order < 2 * sys.nv {
            return Err(Error::invalid("quad_order", format!("need at least 2·nv = {}, got {quad_order}", 2 * sys.nv)));
        }
        let (nodes, weights) = gauss_hermite(quad_order)?;
        let basis = DMatrix::from_fn(quad_order, sys.nv, |q, k| hermite_values(nodes[q], sys.nv)[k]);
        Ok(EntropyRule {
            nv: sys.nv,
            weights,
            basis,
            phi0: sys.sp.phi0.clone(),
        })
    }

    /// `H = Σ_i φ₀_i Σ_q ω_q S_iq ln(S_iq/φ₀_i)` with `S = Σ_k u_ik p_k(v_q)`.
    pub fn evaluate(&self, u: &DVector<f64>) -> EntropyValue {
        let nx = self.phi0.len();
        let grid = DMatrix::from_row_slice(nx, self.nv, u.as_slice());
        let s = &self.basis * grid.transpose();
        let mut h = 0.0;
        let mut total = 0.0;
        let mut clipped = 0.0;
        for i in 0..nx {
            let phi = self.phi0[i];
            for (q, &w) in self.weights.iter().enumerate() {
                let raw = s[(q, i)];
                total += phi * w * raw.abs();
                let sv = if raw < ENTROPY_FLOOR {
                    clipped += phi * w * (ENTROPY_FLOOR - raw).abs();
                    ENTROPY_FLOOR
                } else {
                    raw
                };
                if phi > 0.0 {
                    h += phi * w * sv * (sv / phi).ln();
                }
            }
        }
        let clipped_fraction = if total > 0.0 { clipped / total } else { 0.0 };
        EntropyValue {
            h,
            clipped_fraction,
            flagged: clipped_fraction > CLIP_LIMIT,
        }
    }
}

pub fn relative_entropy(s: &State, sys: &PhaseSystem, quad_order: usize) -> Result<EntropyValue> {
    if (s.mass - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("mass", format!("entropy needs (u, m0) = 1, got {}", s.mass)));
    }
    Ok(EntropyRule::new(sys, quad_order)?.evaluate(&s.u))
}

/// Unit steady state of `K`: `m₀` for the mimetic scheme, otherwise the
/// kernel vector from inverse iteration.
pub fn steady_state(sys: &PhaseSystem, k: &PhaseOperator) -> Result<DVector<f64>> {
    if sys.sp.scheme == Scheme::Mimetic {
        return Ok(sys.m0.clone());
    }
    let km = k.sparse().ok_or_else(|| Error::DimensionMismatch("K must be sparse".into()))?;
    let shifted = km + &(sparse::identity(sys.n) * 1e-10);
    let lu = BandedLu::factor(&shifted)?;
    let mut z = sys.m0.clone();
    for _ in 0..3 {
        z = lu.solve(&z);
        z /= z.norm();
    }
    if z.dot(&sys.m0) < 0.0 {
        z = -z;
    }
    Ok(z)
}

#[derive(Debug, Clone)]
pub struct EvolveSettings {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    /// Defaults to `max(dt, T/2000)`.
    pub record_every: Option<f64>,
    /// `(δ, C_ℒ)` for the envelope column; zero rate when absent.
    pub envelope: Option<(f64, f64)>,
    pub entropy: Option<EntropyRule>,
}

fn deviation(u: &DVector<f64>, z: &DVector<f64>) -> f64 {
    (u - z * z.dot(u)).norm()
}

/// Integrates from `s0` to `t_end`, recording a row every recording interval.
pub fn evolve(sys: &PhaseSystem, k: &PhaseOperator, s0: &State, settings: &EvolveSettings) -> Result<DecayTrace> {
    let EvolveSettings { dt, t_end, .. } = *settings;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("evolve.dt", format!("must be > 0, got {dt}")));
    }
    if !(t_end >= dt) {
        return Err(Error::invalid("evolve.T", format!("must be >= dt, got {t_end}")));
    }
    let n = sys.n;
    if s0.u.len() != n {
        return Err(Error::DimensionMismatch(format!("state of length {} for n = {n}", s0.u.len())));
    }
    let record_every = settings.record_every.unwrap_or(dt.max(t_end / 2000.0));
    if !(record_every >= dt) {
        return Err(Error::invalid("evolve.record_every", format!("must be >= dt, got {record_every}")));
    }
    let steps = (t_end / dt).round() as usize;
    let stride = ((record_every / dt).round() as usize).max(1);

    let km = k.sparse().ok_or_else(|| Error::DimensionMismatch("K must be sparse".into()))?;
    let id = sparse::identity(n);
    enum Stepper {
        Implicit { lu: BandedLu, rhs: Option<nalgebra_sparse::CsrMatrix<f64>> },
        Dense(DMatrix<f64>),
    }
    let stepper = match settings.integrator {
        Integrator::CrankNicolson => Stepper::Implicit {
            lu: BandedLu::factor(&(&id + &(km * (0.5 * dt))))?,
            rhs: Some(&id - &(km * (0.5 * dt))),
        },
        Integrator::BackwardEuler => Stepper::Implicit {
            lu: BandedLu::factor(&(&id + &(km * dt)))?,
            rhs: None,
        },
        Integrator::DenseExpm => {
            if n > EXPM_CAP {
                return Err(Error::SizeCap {
                    what: "dense matrix exponential",
                    n,
                    cap: EXPM_CAP,
                });
            }
            Stepper::Dense((sparse::to_dense(km) * (-dt)).exp())
        }
    };

    let z = steady_state(sys, k)?;
    let mut u = s0.u.clone();
    let mass0 = u.dot(&sys.m0);
    let dev0 = deviation(&u, &z);
    let (delta, c_l) = settings.envelope.unwrap_or((0.0, 1.0));
    let mut trace = DecayTrace::default();
    let record = |trace: &mut DecayTrace, u: &DVector<f64>, t: f64, dev: f64| {
        let entropy = settings.entropy.as_ref().map(|rule| rule.evaluate(u));
        if let Some(e) = entropy {
            trace.max_clipped_fraction = trace.max_clipped_fraction.max(e.clipped_fraction);
        }
        trace.rows.push(TraceRow {
            t,
            dev,
            entropy: entropy.map(|e| e.h),
            envelope: decay_envelope(delta, c_l, dev0, t),
            mass: u.dot(&sys.m0),
            norm: u.norm(),
        });
    };
    record(&mut trace, &u, s0.t, dev0);
    let mut dev = dev0;
    for step in 1..=steps {
        u = match &stepper {
            Stepper::Implicit { lu, rhs } => match rhs {
                Some(r) => lu.solve(&sparse::matvec(r, &u)),
                None => lu.solve(&u),
            },
            Stepper::Dense(e) => e * &u,
        };
        let next = deviation(&u, &z);
        if next > dev * (1.0 + CONTRACTION_SLACK) + 1e-15 * u.norm() {
            return Err(Error::ContractionViolated {
                step,
                before: dev,
                after: next,
            });
        }
        dev = next;
        trace.max_mass_drift = trace.max_mass_drift.max((u.dot(&sys.m0) - mass0).abs());
        if step % stride == 0 || step == steps {
            record(&mut trace, &u, s0.t + step as f64 * dt, dev);
        }
    }
    trace.final_state = Some(u);
    Ok(trace)
}

/// `e^{-tK}u₀` by the dense exponential; the integrator oracle.
pub fn exact_solution(k: &PhaseOperator, u0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if k.n > EXPM_CAP {
        return Err(Error::SizeCap {
            what: "dense matrix exponential",
            n: k.n,
            cap: EXPM_CAP,
        });
    }
    Ok((k.to_dense()? * (-t)).exp() * u0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub t_start: f64,
    pub t_end: f64,
}

/// Least-squares slope of `ln dev` over rows with `dev/dev(0) ∈ [1e-6, 1e-1]`.
pub fn fit_decay_rate(trace: &DecayTrace) -> Result<RateFit> {
    let rows = &trace.rows;
    if rows.len() < 10 {
        return Err(Error::InsufficientRange(format!("need at least 10 trace rows, got {}", rows.len())));
    }
    let dev0 = rows[0].dev;
    if !(dev0 > 1e-13) {
        return Err(Error::InsufficientRange(format!("initial deviation {dev0:.3e} is at round-off level")));
    }
    let window: Vec<&TraceRow> = rows
        .iter()
        .filter(|r| {
            let q = r.dev / dev0;
            (1e-6..=1e-1).contains(&q) && r.dev > 1e-13
        })
        .collect();
    if window.len() < 2 {
        return Err(Error::InsufficientRange(
            "deviation never spans [1e-6, 1e-1] of its initial value".into(),
        ));
    }
    let m = window.len() as f64;
    let tm = window.iter().map(|r| r.t).sum::<f64>() / m;
    let ym = window.iter().map(|r| r.dev.ln()).sum::<f64>() / m;
    let sxy: f64 = window.iter().map(|r| (r.t - tm) * (r.dev.ln() - ym)).sum();
    let sxx: f64 = window.iter().map(|r| (r.t - tm).powi(2)).sum();
    Ok(RateFit {
        rate: -sxy / sxx,
        t_start: window[0].t,
        t_end: window[window.len() - 1].t,
    })
}
