//! The invariant suite on small fixed configurations.

use nalgebra::{DMatrix, DVector};

use crate::certificate::{analytic_norm_bounds, GuardedForm};
use crate::error::Result;
use crate::evolution::{self, EntropyRule, EvolveSettings, InitialKind, Integrator};
use crate::ladder::LadderSet;
use crate::linalg::{dense, sparse};
use crate::phase::PhaseSystem;
use crate::potential::Potential;
use crate::report::{self, Command, GridConfig, InvariantCheck, RunConfig};
use crate::spatial::{build_spatial_ops, Scheme, SpatialGrid, SpatialOps};
use crate::spectral::{self, operator_norm, operator_norm_with};

const RADIUS: f64 = 8.0;
const NORM_TOL: f64 = 1e-10;

fn dmax(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, &x| a.max(x.abs()))
}

fn ops(p: Potential, nx: usize, gamma: f64, scheme: Scheme) -> Result<SpatialOps> {
    build_spatial_ops(SpatialGrid::new(RADIUS, nx)?, &p, gamma, scheme)
}

fn system(p: Potential, nx: usize, nv: usize, gamma: f64) -> Result<PhaseSystem> {
    PhaseSystem::new(&ops(p, nx, gamma, Scheme::Mimetic)?, &LadderSet::new(nv, gamma)?)
}

fn cosine() -> Potential {
    Potential::harmonic_cosine(1.0, 0.5, 2.0).expect("valid potential")
}

fn harmonic() -> Potential {
    Potential::harmonic(1.0).expect("valid potential")
}

/// Worst value over a family of measurements that must each stay below `tol`.
fn below(name: &str, values: impl IntoIterator<Item = f64>, tol: f64) -> InvariantCheck {
    let worst = values.into_iter().fold(0.0, f64::max);
    InvariantCheck::new(name, worst <= tol, worst)
}

fn in_range(name: &str, value: f64, lo: f64, hi: f64) -> InvariantCheck {
    InvariantCheck::new(name, (lo..=hi).contains(&value), value)
}

fn ladder_checks() -> Result<Vec<InvariantCheck>> {
    let (mut ccr, mut kill, mut number, mut pattern, mut cc) = (vec![], vec![], vec![], vec![], vec![]);
    for nv in [2, 8, 32] {
        for gamma in [0.25, 1.0, 4.0] {
            let ls = LadderSet::new(nv, gamma)?;
            let comm = ls.commutator();
            let mut target = DMatrix::identity(nv, nv) * gamma;
            target[(nv - 1, nv - 1)] = comm[(nv - 1, nv - 1)];
            ccr.push(dmax(&(comm - target)));
            let mut e0 = DVector::zeros(nv);
            e0[0] = 1.0;
            kill.push((&ls.b * &e0).amax());
            number.push((0..nv).map(|k| (ls.nop[(k, k)] - gamma * k as f64).abs()).fold(0.0, f64::max));
            number.push(dmax(&(&ls.nop - DMatrix::from_diagonal(&ls.nop.diagonal()))));
            let same = ls
                .b
                .iter()
                .zip(ls.c.iter())
                .all(|(b, c)| (*b != 0.0) == (*c != 0.0) && (*c == 0.0 || *c == 1.0));
            pattern.push(if same && ls.cdag == ls.c.transpose() { 0.0 } else { 1.0 });
            cc.push(dmax(&(&ls.cdag * &ls.c - (DMatrix::identity(nv, nv) - &ls.pi1v))));
        }
    }
    Ok(vec![
        below("ladder.ccr_below_top_mode", ccr, 1e-12),
        below("ladder.b_kills_e0", kill, 0.0),
        below("ladder.number_spectrum", number, 1e-12),
        below("ladder.c_pattern", pattern, 0.0),
        below("ladder.cdag_c_is_complement", cc, 1e-14),
    ])
}

fn smooth(grid: &SpatialGrid) -> DVector<f64> {
    DVector::from_fn(grid.nx, |i, _| {
        let x = grid.node(i);
        (-x * x / 4.0).exp() * (1.0 + x)
    })
}

fn spatial_checks() -> Result<Vec<InvariantCheck>> {
    let mut out = Vec::new();
    let mut adjoint = vec![];
    for scheme in [Scheme::Mimetic, Scheme::Centered] {
        let o = ops(cosine(), 64, 1.0, scheme)?;
        adjoint.push(dmax(&(&o.adag - o.a.transpose())));
    }
    out.push(below("spatial.adag_is_transpose", adjoint, 0.0));
    for (scheme, p, lo, hi, name) in [
        (Scheme::Mimetic, cosine(), 1.7, 2.3, "spatial.commutator_order_mimetic"),
        (Scheme::Centered, harmonic(), 3.5, 4.5, "spatial.commutator_order_centered"),
    ] {
        let r = [129, 257]
            .iter()
            .map(|&nx| ops(p, nx, 1.0, scheme).map(|o| o.commutator_residual(&smooth(&o.grid))))
            .collect::<Result<Vec<_>>>()?;
        out.push(in_range(name, r[0] / r[1], lo, hi));
    }
    let o = ops(cosine(), 256, 1.0, Scheme::Mimetic)?;
    let fast = o.smallest_w_eigenvalues(6)?;
    let oracle = dense::symmetric_eigenvalues(&o.w)?;
    let rel = fast
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);
    out.push(below("spatial.w_eigenvalues_match_dense", [rel], 1e-8));
    Ok(out)
}

fn phase_checks() -> Result<Vec<InvariantCheck>> {
    let s = system(cosine(), 32, 8, 1.0)?;
    let n = s.n;
    let x0 = s.assemble_transport().to_dense()?;
    let k = s.assemble_k().to_dense()?;
    let pi1 = s.projector_pi1().to_dense()?;
    let id = DMatrix::<f64>::identity(n, n);
    let sym_k = (&k + k.transpose()) * 0.5 - (&id - &pi1) * s.gamma();
    let lifted = sparse::to_dense(&sparse::kron(
        &sparse::identity(s.nx),
        &sparse::from_dense(&(&s.ls.cdag * &s.ls.c)),
    ));

    let l2 = s.assemble_lambda2().to_dense()?;
    let (vals, vecs) = dense::symmetric_eigen(&l2)?;
    let inv_sqrt = &vecs * DMatrix::from_diagonal(&DVector::from_iterator(n, vals.iter().map(|v| 1.0 / v.sqrt()))) * vecs.transpose();
    let a = sparse::to_dense(&s.a);
    let b = sparse::to_dense(&s.b);
    let mut ladder_norms = vec![];
    for op in [&a * &inv_sqrt, &b * &inv_sqrt] {
        let est = operator_norm_with(n, |u| &op * u, |u| op.tr_mul(u), NORM_TOL, 20_000)?;
        ladder_norms.push(est.value - 1.0);
    }
    let w = sparse::to_dense(&(&s.adag * &s.a));
    let nop = sparse::to_dense(&(&s.bdag * &s.b));
    let scale = dmax(&l2).max(1.0);
    let commutes = [&w, &nop, &pi1].iter().map(|m| dmax(&(&l2 * *m - *m * &l2)) / scale).collect::<Vec<_>>();
    let slice = DMatrix::from_fn(s.nx, s.nx, |i, j| l2[(i * s.nv, j * s.nv)]);
    let mode0 = dmax(&(slice - (DMatrix::identity(s.nx, s.nx) + &s.sp.w)));

    Ok(vec![
        below("phase.x0_antisymmetric", [dmax(&(&x0 + x0.transpose()))], 1e-12),
        below("phase.sym_k_is_collision", [dmax(&sym_k)], 1e-12),
        below("phase.k_kills_m0", [(&k * &s.m0).amax(), (k.transpose() * &s.m0).amax()], 1e-12),
        below("phase.lifted_cdag_c", [dmax(&(lifted - (&id - &pi1)))], 1e-14),
        below("phase.ladder_over_lambda_bounded", ladder_norms, 1e-8),
        below("phase.lambda2_commutes", commutes, 1e-12),
        below("phase.lambda2_mode0_slice", [mode0], 1e-12),
    ])
}

fn spectral_checks() -> Result<Vec<InvariantCheck>> {
    let mut sumset = vec![];
    let mut ordering = vec![];
    for gamma in [0.25, 1.0, 4.0] {
        for p in [harmonic(), cosine()] {
            let r = spectral::spectral_gaps(&system(p, 64, 6, gamma)?)?;
            sumset.push((r.alpha - r.tau.min(gamma)).abs());
            ordering.push((r.alpha - r.tau).max(r.alpha - gamma));
        }
    }
    let s = system(cosine(), 32, 8, 1.0)?;
    let spec = spectral::spectrum_k(&s.assemble_k())?;
    let l = s.assemble_l();
    let full = operator_norm(&l, NORM_TOL, 20_000)?.value;
    let project = |u: &DVector<f64>| u - &s.m0 * s.m0.dot(u);
    let restricted = operator_norm_with(
        s.n,
        |u| l.apply(&project(u)),
        |u| project(&l.apply_transpose(u)),
        NORM_TOL,
        20_000,
    )?
    .value;
    Ok(vec![
        below("spectral.alpha_equals_min_tau_gamma", sumset, 1e-10),
        below("spectral.alpha_below_tau_and_gamma", ordering, 1e-10),
        InvariantCheck::new("spectral.k_single_zero_eigenvalue", spec.near_zero == 1, spec.near_zero as f64),
        InvariantCheck::new("spectral.k_right_half_plane", spec.min_real >= -1e-10, spec.min_real),
        below("spectral.restricted_norm_monotone", [restricted - full], NORM_TOL * full),
    ])
}

fn certificate_checks() -> Result<Vec<InvariantCheck>> {
    let mut dominance = vec![];
    for p in [harmonic(), cosine()] {
        for gamma in [0.25, 1.0, 4.0] {
            let s = system(p, 32, 8, gamma)?;
            let (m2, m3) = p.derivative_bounds();
            let (bl, ba) = analytic_norm_bounds(gamma, m2, m3);
            let nl = operator_norm(&s.assemble_l(), 1e-9, 20_000)?.value;
            let na = operator_norm(&s.assemble_a_operator(), 1e-9, 20_000)?.value;
            dominance.push((nl - bl).max(na - ba));
        }
    }
    let sp = ops(harmonic(), 32, 1.0, Scheme::Mimetic)?;
    let form = GuardedForm::new(&sp, 8, 1.0)?;
    let at_zero = form.lambda_min(0.0)?;
    Ok(vec![
        below("certificate.bounds_dominate_norms", dominance, 0.0),
        below("certificate.no_coercivity_without_correction", [at_zero], 1e-10),
    ])
}

fn evolution_checks() -> Result<Vec<InvariantCheck>> {
    let s = system(harmonic(), 32, 8, 1.0)?;
    let k = s.assemble_k();
    let st = evolution::make_initial(&InitialKind::default(), &s)?;
    let t_end = 2.0;
    let exact = evolution::exact_solution(&k, &st.u, t_end)?;
    let mut errs = vec![];
    for dt in [0.02, 0.01] {
        let settings = EvolveSettings {
            dt,
            t_end,
            integrator: Integrator::CrankNicolson,
            record_every: None,
            envelope: None,
            entropy: None,
        };
        let tr = evolution::evolve(&s, &k, &st, &settings)?;
        errs.push((tr.final_state.unwrap_or_default() - &exact).norm() / exact.norm());
    }
    let rule = EntropyRule::new(&s, 16)?;
    let h_eq = rule.evaluate(&s.m0).h;
    Ok(vec![
        in_range("evolution.crank_nicolson_order", errs[0] / errs[1], 3.5, 4.5),
        below("evolution.entropy_of_equilibrium", [h_eq.abs()], 1e-10),
    ])
}

fn potential_checks() -> Result<Vec<InvariantCheck>> {
    let p = cosine();
    let x = 0.7;
    let err = |h: f64| {
        let d1 = (p.eval_v(x + h) - p.eval_v(x - h)) / (2.0 * h) - p.eval_v1(x);
        let d2 = (p.eval_v1(x + h) - p.eval_v1(x - h)) / (2.0 * h) - p.eval_v2(x);
        let d3 = (p.eval_v2(x + h) - p.eval_v2(x - h)) / (2.0 * h) - p.eval_v3(x);
        d1.abs().max(d2.abs()).max(d3.abs())
    };
    let (m2, m3) = p.derivative_bounds();
    let excess = (0..=400)
        .map(|i| {
            let x = -RADIUS + i as f64 * 0.04;
            (p.eval_v2(x).abs() - m2).max(p.eval_v3(x).abs() - m3)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let masses = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&l| Potential::harmonic(l).and_then(|p| p.confinement_mass(RADIUS, 512)))
        .collect::<Result<Vec<_>>>()?;
    let rise = masses.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![
        in_range("potential.derivative_order", err(1e-2) / err(5e-3), 3.5, 4.5),
        below("potential.bounds_dominate_samples", [excess], 0.0),
        below("potential.confinement_mass_monotone", [rise], 0.0),
    ])
}

/// A reduced end-to-end run; contributes the pipeline invariants.
fn pipeline_checks() -> Result<Vec<InvariantCheck>> {
    let mut cfg = RunConfig {
        potential: cosine(),
        grid: GridConfig { radius: RADIUS, nx: 32 },
        nv: 8,
        ..Default::default()
    };
    cfg.evolve.dt = 0.05;
    cfg.evolve.t_end = 30.0;
    let exec = report::execute(&cfg, Command::Evolve)?;
    let mut out: Vec<InvariantCheck> = exec
        .report
        .invariant_suite
        .into_iter()
        .map(|c| InvariantCheck {
            name: format!("run.{}", c.name),
            ..c
        })
        .collect();
    for st in exec.report.stages {
        if let Some(e) = st.error {
            out.push(InvariantCheck::new(format!("run.stage.{}: {e}", st.stage), false, f64::NAN));
        }
    }
    Ok(out)
}

/// Every module invariant on small grids. Groups that error out are reported
/// as one failed check.
pub fn run_suite() -> Vec<InvariantCheck> {
    let groups: [(&str, fn() -> Result<Vec<InvariantCheck>>); 8] = [
        ("potential", potential_checks),
        ("ladder", ladder_checks),
        ("spatial", spatial_checks),
        ("phase", phase_checks),
        ("spectral", spectral_checks),
        ("certificate", certificate_checks),
        ("evolution", evolution_checks),
        ("run", pipeline_checks),
    ];
    let mut out = Vec::new();
    for (name, group) in groups {
        match group() {
            Ok(checks) => out.extend(checks),
            Err(e) => out.push(InvariantCheck::new(format!("{name}: {e}"), false, f64::NAN)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_checkout_passes_everything() {
        let suite = run_suite();
        let failed: Vec<_> = suite.iter().filter(|c| !c.pass).collect();
        assert!(failed.is_empty(), "{failed:#?}");
        assert!(suite.len() >= 30, "{}", suite.len());
    }
}
