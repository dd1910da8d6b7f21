//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command as Process, ExitCode};

use nalgebra::{DMatrix, DVector};

use hypocoerce::certificate::{self, GuardedForm, VERIFY_FRACTION};
use hypocoerce::evolution::{self, EntropyRule, EvolveSettings, InitialKind, Integrator};
use hypocoerce::ladder::LadderSet;
use hypocoerce::linalg::{dense, sparse};
use hypocoerce::phase::PhaseSystem;
use hypocoerce::potential::Potential;
use hypocoerce::report::{self, Command, RunConfig};
use hypocoerce::spatial::{build_spatial_ops, Scheme, SpatialGrid, SpatialOps};
use hypocoerce::spectral::{self, operator_norm};

const LADDER_EXACT: f64 = 1e-14;
const LADDER_CCR: f64 = 1e-12;
const STRUCTURE: f64 = 1e-12;
const ALPHA_RANGE: (f64, f64) = (0.90, 1.02);
const SUMSET: f64 = 1e-10;
const NORM_REL: f64 = 1e-6;
const KERNEL_FORM: f64 = 1e-10;
const RATE_SLACK: f64 = 1.05;
const ENTROPY_FLOOR: f64 = -1e-10;
const ENTROPY_SLACK: f64 = 1e-8;
const ENTROPY_EQ: f64 = 1e-10;
const SECOND_ORDER: (f64, f64) = (3.5, 4.5);
const FIRST_ORDER: (f64, f64) = (1.7, 2.3);
const MASS_DRIFT: f64 = 1e-12;
const B_X0_EXACT: f64 = 1e-12;
const RADIUS: f64 = 8.0;

type Outcome = (bool, String);

fn harmonic() -> Potential {
    Potential::harmonic(1.0).unwrap()
}

fn cosine() -> Potential {
    Potential::harmonic_cosine(1.0, 0.5, 2.0).unwrap()
}

fn spatial(p: Potential, nx: usize, gamma: f64, scheme: Scheme) -> SpatialOps {
    build_spatial_ops(SpatialGrid::new(RADIUS, nx).unwrap(), &p, gamma, scheme).unwrap()
}

fn system_with(p: Potential, nx: usize, nv: usize, gamma: f64, scheme: Scheme) -> PhaseSystem {
    PhaseSystem::new(&spatial(p, nx, gamma, scheme), &LadderSet::new(nv, gamma).unwrap()).unwrap()
}

fn system(p: Potential, nx: usize, nv: usize, gamma: f64) -> PhaseSystem {
    system_with(p, nx, nv, gamma, Scheme::Mimetic)
}

fn dmax(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, &x| a.max(x.abs()))
}

fn within(x: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&x)
}

fn ladder_algebra() -> Outcome {
    let (mut cc, mut ccr, mut kill) = (0.0f64, 0.0f64, 0.0f64);
    for nv in [2, 8, 32] {
        for gamma in [0.25, 1.0, 4.0] {
            let ls = LadderSet::new(nv, gamma).unwrap();
            let mut comp = DMatrix::identity(nv, nv);
            comp[(0, 0)] = 0.0;
            cc = cc.max(dmax(&(&ls.cdag * &ls.c - comp)));
            let comm = ls.commutator();
            let m = nv - 1;
            let block = comm.view((0, 0), (m, m)) - DMatrix::identity(m, m) * gamma;
            ccr = ccr.max(dmax(&block));
            let mut e0 = DVector::zeros(nv);
            e0[0] = 1.0;
            kill = kill.max((&ls.b * e0).amax());
        }
    }
    (
        cc <= LADDER_EXACT && ccr <= LADDER_CCR && kill == 0.0,
        format!("|C*C-(I-P1)| = {cc:.2e}, |[B,B*]-g| = {ccr:.2e}, |B e0| = {kill:.1e}"),
    )
}

fn structural_exactness() -> Outcome {
    let s = system(harmonic(), 128, 16, 1.0);
    let x0 = s.assemble_transport();
    let x0 = x0.sparse().unwrap();
    let anti = sparse::max_abs(&(x0 + &x0.transpose()));
    let k = s.assemble_k();
    let km = k.sparse().unwrap();
    let sym = (km + &km.transpose()) * 0.5;
    let collision = (&sparse::identity(s.n) - s.projector_pi1().sparse().unwrap()) * s.gamma();
    let sym_err = sparse::max_abs(&sparse::sub(&sym, &collision));
    let kill = k.apply(&s.m0).amax();
    let kill_t = k.apply_transpose(&s.m0).amax();
    let pi0 = s.projector_pi0().to_dense().unwrap();
    let idem = dmax(&(&pi0 * &pi0 - &pi0));
    let worst = anti.max(sym_err).max(kill).max(kill_t).max(idem);
    (
        worst <= STRUCTURE,
        format!("X0+X0^T {anti:.1e}, Sym(K) {sym_err:.1e}, K m0 {kill:.1e}, K^T m0 {kill_t:.1e}, P0^2-P0 {idem:.1e}"),
    )
}

fn spectral_gap() -> Outcome {
    let a512 = spectral::spectral_gaps(&system(harmonic(), 512, 16, 1.0)).unwrap();
    let a1024 = spectral::spectral_gaps(&system(harmonic(), 1024, 16, 1.0)).unwrap();
    let mut sumset = [a512, a1024].iter().map(|r| (r.alpha - r.tau.min(r.gamma)).abs()).fold(0.0, f64::max);
    for p in [harmonic(), cosine()] {
        for gamma in [0.25, 1.0, 4.0] {
            for nx in [32, 64] {
                let r = spectral::spectral_gaps(&system(p, nx, 8, gamma)).unwrap();
                sumset = sumset.max((r.alpha - r.tau.min(gamma)).abs());
            }
        }
    }
    let closer = (a1024.alpha - 1.0).abs() < (a512.alpha - 1.0).abs();
    (
        within(a512.alpha, ALPHA_RANGE) && closer && sumset <= SUMSET,
        format!(
            "alpha(512) = {:.10}, alpha(1024) = {:.10}, max |alpha - min(tau,gamma)| = {sumset:.1e}",
            a512.alpha, a1024.alpha
        ),
    )
}

fn norm_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for p in [harmonic(), cosine()] {
        let s = system(p, 32, 8, 1.0);
        for op in [s.assemble_l(), s.assemble_a_operator()] {
            let power = operator_norm(&op, certificate::NORM_TOL, certificate::NORM_MAX_ITER).unwrap().value;
            let svd = dense::singular_values(&op.to_dense().unwrap()).unwrap()[0];
            worst = worst.max((power - svd).abs() / svd);
        }
    }
    (worst <= NORM_REL, format!("max relative gap power iteration vs SVD = {worst:.2e}"))
}

fn bound_dominance() -> Outcome {
    let mut margin = f64::INFINITY;
    for p in [harmonic(), cosine()] {
        for gamma in [0.25, 1.0, 4.0] {
            for nx in [32, 64] {
                let s = system(p, nx, 8, gamma);
                let (m2, m3) = p.derivative_bounds();
                let (bl, ba) = certificate::analytic_norm_bounds(gamma, m2, m3);
                let (nl, na) = certificate::measured_norms(&s).unwrap();
                margin = margin.min(bl - nl).min(ba - na);
            }
        }
    }
    (margin >= 0.0, format!("smallest bound - measured norm = {margin:.4e}"))
}

/// `(λ_min at certified ε, δ)` for the guarded form at `(nx, nv)`.
fn certified_form(nx: usize, nv: usize) -> (f64, f64, f64) {
    let sp = spatial(harmonic(), nx, 1.0, Scheme::Mimetic);
    let s = PhaseSystem::new(&sp, &LadderSet::new(nv, 1.0).unwrap()).unwrap();
    let spec = spectral::spectral_gaps(&s).unwrap();
    let (nl, na) = certificate::measured_norms(&s).unwrap();
    let choice = certificate::choose_epsilon(spec.alpha, spec.gamma, nl, na).unwrap();
    let form = GuardedForm::new(&sp, nv, 1.0).unwrap();
    let lmin = form.lambda_min(choice.epsilon).unwrap();
    let at_zero = if nx * nv <= 4096 { form.lambda_min(0.0).unwrap() } else { f64::NAN };
    (lmin, choice.delta, at_zero)
}

fn coercivity_certificate() -> Outcome {
    let (l1, d1, z1) = certified_form(128, 16);
    let (l2, d2, _) = certified_form(256, 24);
    let (r1, r2) = (l1 / d1, l2 / d2);
    let ok = l1 >= VERIFY_FRACTION * d1 && z1 <= KERNEL_FORM && r2 >= r1;
    (
        ok,
        format!(
            "(128,16): lambda_min/delta = {r1:.4}, eps=0 -> {z1:.2e}; (256,24): lambda_min = {l2:.4e}, ratio = {r2:.4} ({})",
            if r2 >= r1 { "nondecreasing" } else { "decreases under refinement" }
        ),
    )
}

struct DefaultRun {
    delta: f64,
    fitted: f64,
    rows: Vec<evolution::TraceRow>,
}

fn default_run() -> DefaultRun {
    let exec = report::execute(&RunConfig::default(), Command::Evolve).unwrap();
    let cert = exec.report.certificate.expect("certificate stage");
    DefaultRun {
        delta: cert.delta,
        fitted: exec.report.fitted_rate.expect("rate fit"),
        rows: exec.trace.expect("trace").rows,
    }
}

fn certified_decay(run: &DefaultRun) -> Outcome {
    let dev0 = run.rows[0].dev;
    let worst = run
        .rows
        .iter()
        .map(|r| r.dev / (3.0 * dev0 * (-run.delta * r.t / 3.0).exp()))
        .fold(0.0, f64::max);
    let k = system(harmonic(), 64, 8, 1.0).assemble_k();
    let abscissa = spectral::spectrum_k(&k).unwrap().spec_abscissa;
    let (lo, hi) = (run.delta / 3.0, RATE_SLACK * abscissa);
    (
        worst <= 1.0 && (lo..=hi).contains(&run.fitted),
        format!(
            "max dev/envelope = {worst:.4}, fitted rate {:.6} in [{lo:.6}, {hi:.6}]",
            run.fitted
        ),
    )
}

fn entropy_chain(run: &DefaultRun) -> Outcome {
    let norm0 = run.rows[0].norm;
    let dev0 = run.rows[0].dev;
    let (mut lowest, mut pointwise, mut corollary) = (f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for r in &run.rows {
        let h = r.entropy.unwrap_or(f64::NAN);
        lowest = lowest.min(h);
        pointwise = pointwise.max(h - r.norm * r.dev);
        corollary = corollary.max(h - 3.0 * norm0 * dev0 * (-run.delta * r.t / 3.0).exp());
    }
    let s = system(harmonic(), 128, 16, 1.0);
    let h_eq = EntropyRule::new(&s, 32).unwrap().evaluate(&s.m0).h;
    let ok = lowest >= ENTROPY_FLOOR
        && pointwise <= ENTROPY_SLACK
        && corollary <= ENTROPY_SLACK
        && h_eq.abs() <= ENTROPY_EQ;
    (
        ok,
        format!(
            "min H = {lowest:.2e}, max H-|u|dev = {pointwise:.2e}, max H-envelope = {corollary:.2e}, H(m0) = {h_eq:.1e}"
        ),
    )
}

fn settings(dt: f64, t_end: f64) -> EvolveSettings {
    EvolveSettings {
        dt,
        t_end,
        integrator: Integrator::CrankNicolson,
        record_every: None,
        envelope: None,
        entropy: None,
    }
}

fn integrator_oracles() -> Outcome {
    let s = system(harmonic(), 32, 8, 1.0);
    let k = s.assemble_k();
    let s0 = evolution::make_initial(&InitialKind::default(), &s).unwrap();
    let max_err = |dt: f64| {
        [0.5, 1.0, 2.0]
            .iter()
            .map(|&t| {
                let exact = evolution::exact_solution(&k, &s0.u, t).unwrap();
                let got = evolution::evolve(&s, &k, &s0, &settings(dt, t)).unwrap().final_state.unwrap();
                (got - &exact).norm() / exact.norm()
            })
            .fold(0.0, f64::max)
    };
    let ratio = max_err(0.02) / max_err(0.01);
    let long = evolution::evolve(&s, &k, &s0, &settings(0.01, 100.0));
    let (drift, contraction) = match &long {
        Ok(tr) => (tr.max_mass_drift, true),
        Err(_) => (f64::NAN, false),
    };
    (
        within(ratio, SECOND_ORDER) && drift <= MASS_DRIFT && contraction,
        format!(
            "error ratio under dt halving = {ratio:.4}, mass drift over 1e4 steps = {drift:.1e}, contraction {}",
            if contraction { "held" } else { "violated" }
        ),
    )
}

fn commutator_convergence() -> Outcome {
    let p = cosine();
    let mut exact = 0.0f64;
    let mut ratios = Vec::new();
    for scheme in [Scheme::Mimetic, Scheme::Centered] {
        let r: Vec<_> = [129, 257]
            .iter()
            .map(|&nx| system_with(p, nx, 8, 1.0, scheme).commutator_residuals())
            .collect();
        exact = exact.max(r[0].b_x0_minus_a).max(r[1].b_x0_minus_a);
        ratios.push(r[0].a_x0_plus_hess_b / r[1].a_x0_plus_hess_b);
    }
    (
        exact <= B_X0_EXACT && within(ratios[0], FIRST_ORDER) && within(ratios[1], SECOND_ORDER),
        format!(
            "[b,X0]-a = {exact:.1e}, [a,X0]+V''b ratios: mimetic {:.3}, centered {:.3}",
            ratios[0], ratios[1]
        ),
    )
}

fn determinism() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("r{i}"));
        let status = Process::new(env!("CARGO_BIN_EXE_hypocoerce"))
            .args(["evolve", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        dirs.push(out.join("default-evolve"));
    }
    let same = |f: &str| std::fs::read(dirs[0].join(f)).unwrap() == std::fs::read(dirs[1].join(f)).unwrap();
    let (c, t) = (same("certificate.json"), same("trace.csv"));
    (c && t, format!("certificate.json identical: {c}, trace.csv identical: {t}"))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    }
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut run: Option<DefaultRun> = None;
    let mut failures = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            return;
        }
        let (ok, detail) = guarded(f);
        if !ok {
            failures += 1;
        }
        println!("criterion {id:>2} {name:<26} {}  {detail}", if ok { "PASS" } else { "FAIL" });
    };
    report(1, "ladder_algebra", &mut ladder_algebra);
    report(2, "structural_exactness", &mut structural_exactness);
    report(3, "spectral_gap", &mut spectral_gap);
    report(4, "norm_oracle", &mut norm_oracle);
    report(5, "bound_dominance", &mut bound_dominance);
    report(6, "coercivity_certificate", &mut coercivity_certificate);
    report(7, "certified_decay", &mut || certified_decay(run.get_or_insert_with(default_run)));
    report(8, "entropy_chain", &mut || entropy_chain(run.get_or_insert_with(default_run)));
    report(9, "integrator_oracles", &mut integrator_oracles);
    report(10, "commutator_convergence", &mut commutator_convergence);
    report(11, "determinism", &mut determinism);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
