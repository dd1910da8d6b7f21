use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hypocoerce::report::{self, Command, RunConfig, RunReport};
use hypocoerce::{selftest, Error};

#[derive(Parser)]
#[command(name = "hypocoerce", version, about = "Decay certificates for the linear relaxation Boltzmann equation")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Spectral gaps tau and alpha only.
    Gap(RunArgs),
    /// Gaps, norms, certificate and the coercivity check.
    Certify(RunArgs),
    /// Full pipeline including time integration.
    Evolve(RunArgs),
    /// Invariant suite on small fixed configurations.
    Selftest(SelftestArgs),
    /// One full run per (gamma, beta, nx) point of the config's sweep block.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Root directory for run output; overrides outputs.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const VALIDATION: u8 = 2;

fn is_validation(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidParameter { .. } | Error::NonConfining(_) | Error::TruncationTooSmall { .. } | Error::Json(_)
    )
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    if is_validation(&e) {
        ExitCode::from(VALIDATION)
    } else {
        ExitCode::FAILURE
    }
}

fn load(path: &Path) -> Result<RunConfig, ExitCode> {
    RunConfig::from_path(path).map_err(|e| {
        eprintln!("error: cannot load {}: {e}", path.display());
        ExitCode::from(VALIDATION)
    })
}

fn run_name(config: &Path, what: &str) -> String {
    let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    format!("{stem}-{what}")
}

fn summarize(rep: &RunReport) {
    if let Some(s) = &rep.spectral {
        println!("tau   = {:.10}", s.tau);
        println!("alpha = {:.10}", s.alpha);
        if let Some(k) = s.spec_abscissa_k {
            println!("spectral abscissa of K = {k:.10}");
        }
    }
    if let Some(c) = &rep.certificate {
        println!("epsilon = {:.6e}  delta = {:.6e}  A = {:.6e}", c.epsilon, c.delta, c.a_const);
        println!("certified rate = {:.6e}", c.decay_rate);
        if let Some(l) = c.lambda_min_verified {
            println!("verified form minimum = {l:.6e} ({})", if c.verified { "ok" } else { "NOT certified" });
        }
    }
    if let Some(r) = rep.fitted_rate {
        println!("fitted rate = {r:.6e}");
    }
    for s in rep.stages.iter().filter(|s| s.error.is_some()) {
        println!("stage {} failed: {}", s.stage, s.error.as_deref().unwrap_or(""));
    }
    for c in rep.invariant_suite.iter().filter(|c| !c.pass) {
        println!("FAIL {} ({:.6e})", c.name, c.value);
    }
    println!("invariants: {}/{} passed", rep.passed(), rep.invariant_suite.len());
}

fn single(args: &RunArgs, command: Command, what: &str) -> ExitCode {
    let cfg = match load(&args.config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let root = args.out.clone().unwrap_or_else(|| cfg.outputs.dir.clone());
    match report::run(&cfg, command, &root, &run_name(&args.config, what)) {
        Ok(outcome) => {
            println!("run directory: {}", outcome.dir.display());
            summarize(&outcome.report);
            ExitCode::from(outcome.report.exit_code() as u8)
        }
        Err(e) => fail(e),
    }
}

fn thread_limit() -> Result<usize, ExitCode> {
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("HYPOCOERCE_THREADS") {
        Err(_) => Ok(cpus),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => {
                eprintln!("error: HYPOCOERCE_THREADS must be a positive integer, got {v:?}");
                Err(ExitCode::from(VALIDATION))
            }
        },
    }
}

fn sweep(args: &RunArgs) -> ExitCode {
    let cfg = match load(&args.config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let limit = match thread_limit() {
        Ok(n) => n,
        Err(code) => return code,
    };
    let workers = report::sweep_workers(cfg.sweep.as_ref().and_then(|s| s.workers), limit);
    let root = args.out.clone().unwrap_or_else(|| cfg.outputs.dir.clone());
    match report::sweep(&cfg, &root, &run_name(&args.config, "sweep"), workers) {
        Ok(outcome) => {
            println!("sweep directory: {} ({workers} workers)", outcome.dir.display());
            for p in &outcome.points {
                println!(
                    "gamma = {:<6} beta = {:<6} nx = {:<5} exit {}  {}",
                    p.gamma,
                    p.beta,
                    p.nx,
                    p.exit_code,
                    p.dir.display()
                );
            }
            println!("summary: {}", outcome.summary_path.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => fail(e),
    }
}

fn selftest(args: &SelftestArgs) -> ExitCode {
    let root = match (&args.out, &args.config) {
        (Some(out), _) => Some(out.clone()),
        (None, Some(path)) => match load(path) {
            Ok(c) => Some(c.outputs.dir),
            Err(code) => return code,
        },
        (None, None) => None,
    };
    let suite = selftest::run_suite();
    for c in &suite {
        println!("{} {} ({:.6e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value);
    }
    let passed = suite.iter().filter(|c| c.pass).count();
    println!("selftest: {passed}/{} passed", suite.len());
    if let Some(root) = root {
        let written = report::fresh_dir(&root, "selftest")
            .and_then(|dir| Ok((report::to_json(&suite)?, dir)))
            .and_then(|(json, dir)| Ok(std::fs::write(dir.join("selftest.json"), json)?));
        if let Err(e) = written {
            return fail(e);
        }
    }
    if passed == suite.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Sub::Gap(a) => single(a, Command::Gap, "gap"),
        Sub::Certify(a) => single(a, Command::Certify, "certify"),
        Sub::Evolve(a) => single(a, Command::Evolve, "evolve"),
        Sub::Sweep(a) => sweep(a),
        Sub::Selftest(a) => selftest(a),
    }
}
