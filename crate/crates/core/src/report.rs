//! Run configuration, the spectral → certificate → evolution pipeline, and the
//! files it leaves behind.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::certificate::{self, Certificate, EpsilonChoice, GuardedForm, VERIFY_FRACTION};
use crate::error::{Error, Result};
use crate::evolution::{self, DecayTrace, EntropyRule, EvolveSettings, InitialKind, Integrator, EXPM_CAP};
use crate::ladder::LadderSet;
use crate::phase::{PhaseSystem, DENSE_CAP};
use crate::potential::{Potential, PotentialKind};
use crate::spatial::{boundary_weight, build_spatial_ops, Scheme, SpatialGrid, SpatialOps, BOUNDARY_WEIGHT_LIMIT};
use crate::spectral::{self, SpectralReport};

/// Largest phase dimension at which a run also computes the dense spectrum of `K`.
pub const SPECTRUM_CAP: usize = 2048;
/// Allowed gap between `α` and `min(τ, γ)`.
pub const SUMSET_TOL: f64 = 1e-10;
/// Initial density weight allowed at `±R`.
pub const INIT_EDGE_LIMIT: f64 = 1e-6;
/// Random samples for the macroscopic coercivity check.
pub const MACRO_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "R")]
    pub radius: f64,
    pub nx: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { radius: 8.0, nx: 128 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative tolerance of the power iterations.
    pub rtol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rtol: certificate::NORM_TOL,
            max_iter: certificate::NORM_MAX_ITER,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub scheme: Integrator,
    pub record_every: Option<f64>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            dt: 0.01,
            t_end: 40.0,
            scheme: Integrator::CrankNicolson,
            record_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write the sparse phase operators in Matrix Market format.
    pub emit_operators: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs"),
            emit_operators: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub nx: Vec<usize>,
    pub workers: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            gamma: vec![0.25, 1.0, 4.0],
            beta: vec![0.0],
            nx: vec![64],
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub potential: Potential,
    pub gamma: f64,
    pub grid: GridConfig,
    pub nv: usize,
    pub scheme: Scheme,
    pub solver: SolverConfig,
    pub evolve: EvolveConfig,
    pub init: InitialKind,
    pub outputs: OutputConfig,
    pub sweep: Option<SweepConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            potential: Potential {
                kind: PotentialKind::Harmonic,
                lambda: 1.0,
                beta: 0.0,
                omega: 1.0,
                dim: 1,
            },
            gamma: 1.0,
            grid: GridConfig::default(),
            nv: 16,
            scheme: Scheme::Mimetic,
            solver: SolverConfig::default(),
            evolve: EvolveConfig::default(),
            init: InitialKind::default(),
            outputs: OutputConfig::default(),
            sweep: None,
        }
    }
}

fn positive(field: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be a finite number > 0, got {x}")))
    }
}

fn finite(field: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be finite, got {x}")))
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn n(&self) -> usize {
        self.grid.nx * self.nv
    }

    /// Checks every field against the preconditions of the stage it feeds.
    pub fn validate(&self) -> Result<()> {
        let p = &self.potential;
        positive("potential.lambda", p.lambda)?;
        if !(p.beta >= 0.0 && p.beta.is_finite()) {
            return Err(Error::invalid("potential.beta", format!("must be finite and >= 0, got {}", p.beta)));
        }
        positive("potential.omega", p.omega)?;
        if p.kind == PotentialKind::Harmonic && p.beta != 0.0 {
            return Err(Error::invalid("potential.beta", "must be 0 for kind = harmonic"));
        }
        if p.dim != 1 {
            return Err(Error::invalid("potential.dim", format!("only dim = 1 is supported, got {}", p.dim)));
        }
        positive("gamma", self.gamma)?;
        positive("grid.R", self.grid.radius)?;
        if self.grid.nx < 8 {
            return Err(Error::invalid("grid.nx", format!("need at least 8 nodes, got {}", self.grid.nx)));
        }
        if self.nv < 2 {
            return Err(Error::invalid(
                "nv",
                format!("need at least 2 Hermite modes, got {}; the collision operator would vanish", self.nv),
            ));
        }
        let w = boundary_weight(self.grid.radius, p);
        if !(w < BOUNDARY_WEIGHT_LIMIT) {
            return Err(Error::invalid(
                "grid.R",
                format!("boundary weight e^(-V(±R)/2) = {w:.3e} must be below {BOUNDARY_WEIGHT_LIMIT:.0e}"),
            ));
        }
        let s = &self.solver;
        if !(s.rtol > 0.0 && s.rtol <= 1e-4) {
            return Err(Error::invalid("solver.rtol", format!("must lie in (0, 1e-4], got {}", s.rtol)));
        }
        if s.max_iter == 0 {
            return Err(Error::invalid("solver.max_iter", "must be positive"));
        }
        let e = &self.evolve;
        positive("evolve.dt", e.dt)?;
        if !(e.t_end >= e.dt && e.t_end.is_finite()) {
            return Err(Error::invalid("evolve.T", format!("must be finite and >= dt, got {}", e.t_end)));
        }
        if let Some(r) = e.record_every {
            if !(r >= e.dt && r.is_finite()) {
                return Err(Error::invalid("evolve.record_every", format!("must be finite and >= dt, got {r}")));
            }
        }
        if e.scheme == Integrator::DenseExpm && self.n() > EXPM_CAP {
            return Err(Error::invalid(
                "evolve.scheme",
                format!("dense_expm is limited to nx·nv <= {EXPM_CAP}, got {}", self.n()),
            ));
        }
        self.validate_init()?;
        if let Some(sw) = &self.sweep {
            self.validate_sweep(sw)?;
        }
        Ok(())
    }

    fn validate_init(&self) -> Result<()> {
        match self.init {
            InitialKind::ShiftedMaxwellian { x0, v0, sigma } => {
                finite("init.x0", x0)?;
                finite("init.v0", v0)?;
                positive("init.sigma", sigma)?;
                let r = self.grid.radius;
                if x0.abs() >= r {
                    return Err(Error::invalid("init.x0", format!("must lie inside (-R, R), got {x0}")));
                }
                let edge = (-(r - x0.abs()).powi(2) / (2.0 * sigma * sigma)).exp();
                if edge > INIT_EDGE_LIMIT {
                    return Err(Error::invalid(
                        "init.sigma",
                        format!("initial density weight {edge:.3e} at the nearest edge exceeds {INIT_EDGE_LIMIT:.0e}"),
                    ));
                }
            }
            InitialKind::ModePerturbation { eta, mode } => {
                finite("init.eta", eta)?;
                if mode >= self.nv {
                    return Err(Error::invalid("init.mode", format!("must be < nv = {}, got {mode}", self.nv)));
                }
            }
            InitialKind::Random { eta, .. } => {
                if !(eta >= 0.0 && eta.is_finite()) {
                    return Err(Error::invalid("init.eta", format!("must be finite and >= 0, got {eta}")));
                }
            }
        }
        Ok(())
    }

    fn validate_sweep(&self, sw: &SweepConfig) -> Result<()> {
        if sw.gamma.is_empty() || sw.beta.is_empty() || sw.nx.is_empty() {
            return Err(Error::invalid("sweep", "gamma, beta and nx lists must be nonempty"));
        }
        if sw.workers == Some(0) {
            return Err(Error::invalid("sweep.workers", "must be positive"));
        }
        for point in self.sweep_points(sw) {
            point.validate().map_err(|err| match err {
                Error::InvalidParameter { field, reason } => Error::InvalidParameter {
                    field: format!("sweep({field})"),
                    reason,
                },
                other => other,
            })?;
        }
        Ok(())
    }

    /// The cartesian product `gamma × beta × nx`, gamma slowest.
    pub fn sweep_points(&self, sw: &SweepConfig) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &gamma in &sw.gamma {
            for &beta in &sw.beta {
                for &nx in &sw.nx {
                    let mut c = self.clone();
                    c.sweep = None;
                    c.gamma = gamma;
                    c.potential.beta = beta;
                    c.grid.nx = nx;
                    out.push(c);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Gap,
    Certify,
    Evolve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub pass: bool,
    pub value: f64,
}

impl InvariantCheck {
    pub fn new(name: impl Into<String>, pass: bool, value: f64) -> Self {
        InvariantCheck {
            name: name.into(),
            pass,
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: Command,
    pub spectral: Option<SpectralReport>,
    pub certificate: Option<Certificate>,
    /// `ε, C, δ, A` recomputed from the closed-form norm bounds.
    pub analytic: Option<EpsilonChoice>,
    pub trace_path: Option<PathBuf>,
    pub fitted_rate: Option<f64>,
    pub fit_window: Option<(f64, f64)>,
    pub max_mass_drift: Option<f64>,
    pub max_clipped_fraction: Option<f64>,
    pub invariant_suite: Vec<InvariantCheck>,
    pub stages: Vec<StageRecord>,
}

impl RunReport {
    fn new(command: Command) -> Self {
        RunReport {
            command,
            spectral: None,
            certificate: None,
            analytic: None,
            trace_path: None,
            fitted_rate: None,
            fit_window: None,
            max_mass_drift: None,
            max_clipped_fraction: None,
            invariant_suite: Vec::new(),
            stages: Vec::new(),
        }
    }

    pub fn passed(&self) -> usize {
        self.invariant_suite.iter().filter(|c| c.pass).count()
    }

    pub fn stage_failed(&self) -> bool {
        self.stages.iter().any(|s| s.status == StageStatus::Failed)
    }

    /// 0 when every stage and invariant passed, 3 when an invariant failed,
    /// 1 when a stage aborted without a failed invariant.
    pub fn exit_code(&self) -> i32 {
        if self.invariant_suite.iter().any(|c| !c.pass) {
            3
        } else if self.stage_failed() {
            1
        } else {
            0
        }
    }

    fn check(&mut self, name: &str, pass: bool, value: f64) {
        self.invariant_suite.push(InvariantCheck::new(name, pass, value));
    }

    fn stage<T>(&mut self, name: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => {
                self.stages.push(StageRecord {
                    stage: name.into(),
                    status: StageStatus::Ok,
                    error: None,
                });
                Some(v)
            }
            Err(e) => {
                self.stages.push(StageRecord {
                    stage: name.into(),
                    status: StageStatus::Failed,
                    error: Some(e.to_string()),
                });
                None
            }
        }
    }
}

/// Everything a pipeline run produced, before anything touches the disk.
pub struct Execution {
    pub report: RunReport,
    pub trace: Option<DecayTrace>,
    pub system: Option<PhaseSystem>,
}

fn build_system(cfg: &RunConfig) -> Result<(SpatialOps, PhaseSystem)> {
    let grid = SpatialGrid::new(cfg.grid.radius, cfg.grid.nx)?;
    let sp = build_spatial_ops(grid, &cfg.potential, cfg.gamma, cfg.scheme)?;
    let ls = LadderSet::new(cfg.nv, cfg.gamma)?;
    let sys = PhaseSystem::new(&sp, &ls)?;
    Ok((sp, sys))
}

/// Runs the pipeline up to the stage named by `command`. Stage failures are
/// recorded in the report; only validation errors are returned.
pub fn execute(cfg: &RunConfig, command: Command) -> Result<Execution> {
    cfg.validate()?;
    let mut rep = RunReport::new(command);
    let out = |rep: RunReport, trace, system| Ok(Execution { report: rep, trace, system });

    let Some((sp, sys)) = rep.stage("phase_assembly", build_system(cfg)) else {
        return out(rep, None, None);
    };

    let spectral = spectral::spectral_gaps(&sys).and_then(|mut s| {
        if sys.n <= SPECTRUM_CAP {
            s.spec_abscissa_k = Some(spectral::spectrum_k(&sys.assemble_k())?.spec_abscissa);
        }
        Ok(s)
    });
    let Some(spec) = rep.stage("spectral", spectral) else {
        return out(rep, None, Some(sys));
    };
    rep.spectral = Some(spec);
    let sumset = (spec.alpha - spec.tau.min(spec.gamma)).abs();
    rep.check("alpha_equals_min_tau_gamma", sumset <= SUMSET_TOL, sumset);
    rep.check("tau_at_least_alpha", spec.tau >= spec.alpha - SUMSET_TOL, spec.tau - spec.alpha);
    rep.check("alpha_at_most_gamma", spec.alpha <= spec.gamma + SUMSET_TOL, spec.gamma - spec.alpha);
    if command == Command::Gap {
        return out(rep, None, Some(sys));
    }

    let tol = cfg.solver.rtol;
    let norms = spectral::operator_norm(&sys.assemble_l(), tol, cfg.solver.max_iter).and_then(|l| {
        let a = spectral::operator_norm(&sys.assemble_a_operator(), tol, cfg.solver.max_iter)?;
        Ok((l.value, a.value))
    });
    let Some((norm_l, norm_a)) = rep.stage("operator_norms", norms) else {
        return out(rep, None, Some(sys));
    };
    let (m2, m3) = cfg.potential.derivative_bounds();
    let Some(mut cert) = rep.stage(
        "certificate",
        certificate::build_certificate(&spec, norm_l, norm_a, m2, m3, None),
    ) else {
        return out(rep, None, Some(sys));
    };
    rep.analytic = certificate::choose_epsilon(spec.alpha, spec.gamma, cert.bound_l, cert.bound_a).ok();
    rep.check("bound_l_dominates", cert.bound_l >= norm_l, cert.bound_l - norm_l);
    rep.check("bound_a_dominates", cert.bound_a >= norm_a, cert.bound_a - norm_a);
    rep.check("delta_positive", cert.delta > 0.0, cert.delta);
    let (t, a, g) = (spec.tau, spec.alpha, spec.gamma);
    let chain = (t / (1.0 + t) - a / (1.0 + a)).min(a / (1.0 + a) - a / (1.0 + g));
    rep.check("gap_chain_inequality", chain >= -SUMSET_TOL, chain);
    let margin = certificate::macroscopic_coercivity_margin(&sys, spec.alpha, MACRO_SAMPLES, cfg.solver.seed);
    rep.check("macroscopic_coercivity", margin >= -1e-10, margin);
    if let Some(abscissa) = spec.spec_abscissa_k {
        rep.check("certified_rate_below_abscissa", cert.decay_rate <= abscissa, abscissa - cert.decay_rate);
    }

    let verify = GuardedForm::new(&sp, cfg.nv, cfg.gamma).and_then(|form| {
        let at_eps = form.lambda_min(cert.epsilon)?;
        let at_zero = if cfg.n() <= DENSE_CAP {
            Some(form.lambda_min(0.0)?)
        } else {
            None
        };
        Ok((at_eps, at_zero))
    });
    if let Some((at_eps, at_zero)) = rep.stage("verification", verify) {
        cert.lambda_min_verified = Some(at_eps);
        cert.verified = at_eps >= VERIFY_FRACTION * cert.delta;
        rep.check("coercivity_at_certified_epsilon", cert.verified, at_eps / cert.delta);
        if let Some(z) = at_zero {
            rep.check("no_coercivity_without_correction", z <= 1e-10, z);
        }
    }
    rep.certificate = Some(cert);
    if command == Command::Certify || rep.stage_failed() {
        return out(rep, None, Some(sys));
    }

    let k = sys.assemble_k();
    let Some(s0) = rep.stage("initial_state", evolution::make_initial(&cfg.init, &sys)) else {
        return out(rep, None, Some(sys));
    };
    let rule = EntropyRule::new(&sys, 2 * cfg.nv);
    let entropy = match rule {
        Ok(r) if !r.evaluate(&s0.u).flagged => Some(r),
        _ => None,
    };
    let settings = EvolveSettings {
        dt: cfg.evolve.dt,
        t_end: cfg.evolve.t_end,
        integrator: cfg.evolve.scheme,
        record_every: cfg.evolve.record_every,
        envelope: Some((cert.delta, cert.c_l())),
        entropy,
    };
    let run = evolution::evolve(&sys, &k, &s0, &settings);
    if let Err(Error::ContractionViolated { after, before, .. }) = &run {
        rep.check("contraction", false, after - before);
    }
    let Some(trace) = rep.stage("evolution", run) else {
        return out(rep, None, Some(sys));
    };
    rep.check("contraction", true, 0.0);
    rep.max_mass_drift = Some(trace.max_mass_drift);
    if cfg.scheme == Scheme::Mimetic {
        rep.check("mass_conservation", trace.max_mass_drift <= 1e-12, trace.max_mass_drift);
    }
    let envelope_ratio = trace
        .rows
        .iter()
        .map(|r| r.dev / r.envelope)
        .fold(0.0, f64::max);
    rep.check("decay_envelope", envelope_ratio <= 1.0, envelope_ratio);
    if settings.entropy.is_some() {
        rep.max_clipped_fraction = Some(trace.max_clipped_fraction);
        let norm0 = trace.rows[0].norm;
        let (mut lowest, mut pointwise, mut corollary) = (f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for r in &trace.rows {
            let h = r.entropy.unwrap_or(f64::NAN);
            lowest = lowest.min(h);
            pointwise = pointwise.max(h - r.norm * r.dev);
            corollary = corollary.max(h - norm0 * r.envelope);
        }
        rep.check("entropy_nonnegative", lowest >= -1e-10, lowest);
        rep.check("entropy_pointwise_bound", pointwise <= 1e-8, pointwise);
        rep.check("entropy_envelope", corollary <= 1e-8, corollary);
    }

    if let Some(fit) = rep.stage("rate_fit", evolution::fit_decay_rate(&trace)) {
        rep.fitted_rate = Some(fit.rate);
        rep.fit_window = Some((fit.t_start, fit.t_end));
        rep.check("fitted_rate_above_certified", fit.rate >= cert.decay_rate, fit.rate - cert.decay_rate);
    }
    out(rep, Some(trace), Some(sys))
}

/// Pretty JSON with every real written to 17 significant digits.
struct SigFigs<'a>(serde_json::ser::PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident),*) => {
        $(fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
            self.0.$name(w)
        })*
    };
}

impl serde_json::ser::Formatter for SigFigs<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    delegate!(begin_array, end_array, end_array_value, begin_object, end_object, begin_object_value, end_object_value);
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFigs(serde_json::ser::PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Creates `root/name`, or `root/name-<unix seconds>[-k]` if that exists.
pub fn fresh_dir(root: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    let first = root.join(name);
    let mut candidates = vec![first];
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    candidates.push(root.join(format!("{name}-{secs}")));
    candidates.extend((1..1000).map(|k| root.join(format!("{name}-{secs}-{k}"))));
    for c in candidates {
        match fs::create_dir(&c) {
            Ok(()) => return Ok(c),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(Error::Io(io::Error::new(io::ErrorKind::AlreadyExists, "no free run directory name")))
}

pub struct RunOutcome {
    pub report: RunReport,
    pub dir: PathBuf,
}

/// Validates, executes and writes `config.json`, `certificate.json`,
/// `trace.csv` and `report.json` into a fresh directory under `root`.
pub fn run(cfg: &RunConfig, command: Command, root: &Path, name: &str) -> Result<RunOutcome> {
    let exec = execute(cfg, command)?;
    let dir = fresh_dir(root, name)?;
    let report = write_execution(cfg, exec, &dir)?;
    Ok(RunOutcome { report, dir })
}

fn write_execution(cfg: &RunConfig, exec: Execution, dir: &Path) -> Result<RunReport> {
    let Execution {
        mut report,
        trace,
        system,
    } = exec;
    fs::write(dir.join("config.json"), to_json(cfg)?)?;
    if let Some(cert) = &report.certificate {
        fs::write(dir.join("certificate.json"), to_json(cert)?)?;
    }
    if let Some(trace) = &trace {
        let path = dir.join("trace.csv");
        fs::write(&path, trace.to_csv())?;
        report.trace_path = Some(path);
    }
    if cfg.outputs.emit_operators {
        if let Some(sys) = &system {
            for (file, op) in [
                ("X0.mtx", sys.assemble_transport()),
                ("K.mtx", sys.assemble_k()),
                ("Lambda2.mtx", sys.assemble_lambda2()),
                ("Pi1.mtx", sys.projector_pi1()),
            ] {
                op.write_matrix_market(&dir.join(file))?;
            }
        }
    }
    fs::write(dir.join("report.json"), to_json(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub beta: f64,
    pub nx: usize,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub fitted_rate: Option<f64>,
    pub exit_code: i32,
    pub dir: PathBuf,
}

pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub dir: PathBuf,
    pub summary_path: PathBuf,
}

impl SweepOutcome {
    pub fn exit_code(&self) -> i32 {
        self.points.iter().map(|p| p.exit_code).max().unwrap_or(0)
    }
}

fn csv_real(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.16e}"),
        None => "nan".into(),
    }
}

/// Worker count: the configured value, capped by `limit`.
pub fn sweep_workers(configured: Option<usize>, limit: usize) -> usize {
    configured.unwrap_or(limit).min(limit).max(1)
}

/// Runs the full pipeline at every sweep point on `workers` threads and writes
/// `summary.csv` next to the per-point directories.
pub fn sweep(cfg: &RunConfig, root: &Path, name: &str, workers: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    let sw = cfg.sweep.clone().unwrap_or_default();
    if cfg.sweep.is_none() {
        let mut with = cfg.clone();
        with.sweep = Some(sw.clone());
        with.validate()?;
    }
    let points = cfg.sweep_points(&sw);
    let dir = fresh_dir(root, name)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Io(io::Error::other(e)))?;
    let results: Vec<Result<SweepPoint>> = pool.install(|| {
        use rayon::prelude::*;
        points
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let pdir = dir.join(format!("point-{i:03}"));
                fs::create_dir(&pdir)?;
                let exec = execute(p, Command::Evolve)?;
                let report = write_execution(p, exec, &pdir)?;
                Ok(SweepPoint {
                    gamma: p.gamma,
                    beta: p.potential.beta,
                    nx: p.grid.nx,
                    alpha: report.spectral.map(|s| s.alpha),
                    delta: report.certificate.as_ref().map(|c| c.delta),
                    fitted_rate: report.fitted_rate,
                    exit_code: report.exit_code(),
                    dir: pdir,
                })
            })
            .collect()
    });
    let points = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("gamma,beta,nx,alpha,delta,fitted_rate\n");
    for p in &points {
        csv.push_str(&format!(
            "{:.16e},{:.16e},{},{},{},{}\n",
            p.gamma,
            p.beta,
            p.nx,
            csv_real(p.alpha),
            csv_real(p.delta),
            csv_real(p.fitted_rate)
        ));
    }
    let summary_path = dir.join("summary.csv");
    fs::write(&summary_path, csv)?;
    Ok(SweepOutcome {
        points,
        dir,
        summary_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig {
            grid: GridConfig { radius: 8.0, nx: 32 },
            nv: 6,
            evolve: EvolveConfig {
                dt: 0.05,
                t_end: 30.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn field_of(e: Error) -> String {
        match e {
            Error::InvalidParameter { field, .. } => field,
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn default_config_roundtrips_and_is_valid() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&to_json(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let sparse: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(sparse, cfg);
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = RunConfig::default();
        c.potential.lambda = -1.0;
        assert_eq!(field_of(c.validate().unwrap_err()), "potential.lambda");
        let mut c = RunConfig::default();
        c.nv = 1;
        assert_eq!(field_of(c.validate().unwrap_err()), "nv");
        let mut c = RunConfig::default();
        c.grid.radius = 2.0;
        assert_eq!(field_of(c.validate().unwrap_err()), "grid.R");
        let mut c = RunConfig::default();
        c.init = InitialKind::ShiftedMaxwellian {
            x0: 1.0,
            v0: 0.0,
            sigma: 4.0,
        };
        assert_eq!(field_of(c.validate().unwrap_err()), "init.sigma");
        let mut c = RunConfig::default();
        c.sweep = Some(SweepConfig {
            beta: vec![0.5],
            ..Default::default()
        });
        assert_eq!(field_of(c.validate().unwrap_err()), "sweep(potential.beta)");
        assert!(serde_json::from_str::<RunConfig>(r#"{"gama": 1}"#).is_err());
    }

    #[test]
    fn json_reals_carry_17_digits() {
        let s = to_json(&vec![0.1f64, 1.0 / 3.0, -2.5e-300]).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("3.3333333333333331e-1"), "{s}");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, 1.0 / 3.0, -2.5e-300]);
    }

    #[test]
    fn small_pipeline_passes_its_invariants() {
        let exec = execute(&small(), Command::Evolve).unwrap();
        let rep = &exec.report;
        assert!(!rep.stage_failed(), "{:?}", rep.stages);
        for c in &rep.invariant_suite {
            assert!(c.pass, "{c:?}");
        }
        assert_eq!(rep.exit_code(), 0);
        assert!(rep.fitted_rate.is_some());
        let cert = rep.certificate.as_ref().unwrap();
        assert!(cert.verified && cert.delta > 0.0);
    }

    #[test]
    fn gap_stops_after_spectral() {
        let exec = execute(&small(), Command::Gap).unwrap();
        assert!(exec.report.certificate.is_none() && exec.trace.is_none());
        assert_eq!(exec.report.stages.len(), 2);
    }

    #[test]
    fn stage_failure_is_recorded() {
        let mut c = small();
        c.evolve.t_end = 0.2;
        let exec = execute(&c, Command::Evolve).unwrap();
        let fit = exec.report.stages.iter().find(|s| s.stage == "rate_fit").unwrap();
        assert_eq!(fit.status, StageStatus::Failed);
        assert!(fit.error.is_some());
        assert_eq!(exec.report.exit_code(), 1);
    }

    #[test]
    fn run_directories_are_never_reused() {
        let tmp = tempfile::tempdir().unwrap();
        let a = fresh_dir(tmp.path(), "x").unwrap();
        let b = fresh_dir(tmp.path(), "x").unwrap();
        let c = fresh_dir(tmp.path(), "x").unwrap();
        assert!(a != b && b != c && a != c);
    }

    #[test]
    fn workers_are_bounded() {
        assert_eq!(sweep_workers(None, 4), 4);
        assert_eq!(sweep_workers(Some(16), 4), 4);
        assert_eq!(sweep_workers(Some(2), 4), 2);
    }
}
