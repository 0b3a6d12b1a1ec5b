//! `hierot`: distances, geodesics, gradient flows and invariant checks for
//! hierarchical measures stored as JSON.
//!
//! Exit codes: 0 success, 2 malformed input, 3 level mismatch, 4 failed check,
//! 1 anything else.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use hierot::functional::gradient_descent;
use hierot::geodesic::{equispaced_grid, optimal_velocity_plan, sample_geodesic, verify_constant_speed, OPTIMALITY_TOL};
use hierot::json::{hier_plan_to_json, measure_to_string, parse_functional_spec, parse_measure, plan_to_json, pretty};
use hierot::suite::{run_suite, CheckSuiteConfig};
use hierot::{Error, HierMeasure, Limits, W2Solver};

#[derive(Parser)]
#[command(name = "hierot", version, about = "Optimal transport in hierarchical Wasserstein spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hierarchical W2 distance between two measure files.
    Distance {
        a: PathBuf,
        b: PathBuf,
        /// Write the full hierarchical transport plan here.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Sample the geodesic from `a` to `b` and check its speed.
    Geodesic {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explicit gradient descent on a functional.
    Flow {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        iters: usize,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run the seeded invariant suites and print a JSON report.
    Check {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    All,
    Metric,
    Coupling,
    Geodesic,
    Calculus,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::All => "all",
            Suite::Metric => "metric",
            Suite::Coupling => "coupling",
            Suite::Geodesic => "geodesic",
            Suite::Calculus => "calculus",
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::LevelMismatch { .. } => 3,
            Error::Schema(_)
            | Error::NonUnitMass { .. }
            | Error::InvalidPoint { .. }
            | Error::InvalidInput(_)
            | Error::BaseMismatch(_) => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 2, message: format!("{}: {e}", path.display()) }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure { code: 1, message: format!("{}: {e}", path.display()) })
}

fn load_measure(path: &Path) -> Result<HierMeasure, Failure> {
    let got = parse_measure(&read(path)?).map_err(|e| {
        let f = Failure::from(e);
        Failure { message: format!("{}: {}", path.display(), f.message), ..f }
    })?;
    for w in got.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(got.value)
}

fn solver() -> Result<W2Solver, Failure> {
    Ok(W2Solver::new(Limits::from_env()?))
}

/// 17 significant digits, enough to round-trip any f64.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn distance(a: &Path, b: &Path, plan: Option<&Path>) -> Result<u8, Failure> {
    let (mu, nu) = (load_measure(a)?, load_measure(b)?);
    let solver = solver()?;
    if mu.level() == 0 && nu.level() == 0 {
        // Two points: the plan is the single pairing.
        let d2 = solver.w2_sq(&mu, &nu)?;
        if let Some(p) = plan {
            write(p, &pretty(&json!({"level": 0, "value": d2, "rows": 1, "cols": 1, "matrix": [1.0], "cost": [d2]})))?;
        }
        let out = json!({
            "w2": d2.sqrt(),
            "w2_sq": d2,
            "level": 0,
            "plan_summary": {"rows": 1, "cols": 1, "support": [{"i": 0, "j": 0, "mass": 1.0}], "certified": true},
        });
        print!("{}", pretty(&out));
        return Ok(0);
    }
    let hp = solver.opt_hier_plan(&mu, &nu)?;
    if let Some(p) = plan {
        write(p, &pretty(&hier_plan_to_json(&hp)))?;
    }
    let support: Vec<_> = hp.support().into_iter().map(|(i, j, m)| json!({"i": i, "j": j, "mass": m})).collect();
    let out = json!({
        "w2": hp.value().max(0.0).sqrt(),
        "w2_sq": hp.value(),
        "level": mu.level(),
        "plan_summary": {
            "rows": hp.solution.plan.rows,
            "cols": hp.solution.plan.cols,
            "support": support,
            "certified": hp.is_certified(),
        },
    });
    print!("{}", pretty(&out));
    Ok(0)
}

fn geodesic(a: &Path, b: &Path, steps: usize, out: &Path) -> Result<u8, Failure> {
    if steps == 0 {
        return Err(Error::InvalidInput("--steps must be at least 1".into()).into());
    }
    let (mu, nu) = (load_measure(a)?, load_measure(b)?);
    let solver = solver()?;
    let gamma = optimal_velocity_plan(&solver, &mu, &nu)?;
    let grid = equispaced_grid(steps + 1);
    let report = verify_constant_speed(&solver, &gamma, &grid)?;
    fs::create_dir_all(out).map_err(|e| Failure { code: 1, message: format!("{}: {e}", out.display()) })?;
    let width = steps.to_string().len().max(3);
    let mut files = Vec::new();
    for (k, sample) in sample_geodesic(&gamma, &grid).iter().enumerate() {
        let name = format!("measure_{k:0width$}.json");
        write(&out.join(&name), &measure_to_string(&sample.measure))?;
        files.push(name);
    }
    write(&out.join("plan.json"), &pretty(&plan_to_json(&gamma)))?;
    let mut csv = String::from("t,w2_to_start,w2_to_end,speed_deviation\n");
    for k in 0..grid.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            num(grid[k]),
            num(report.w2_to_start[k]),
            num(report.w2_to_end[k]),
            num(report.deviations[k])
        );
    }
    write(&out.join("speed.csv"), &csv)?;
    let pass = report.passes(OPTIMALITY_TOL);
    let summary = json!({
        "w2": report.endpoint_distance,
        "speed": report.speed,
        "max_deviation": report.max_deviation,
        "tolerance": OPTIMALITY_TOL,
        "pass": pass,
        "files": files,
    });
    print!("{}", pretty(&summary));
    Ok(if pass { 0 } else { 4 })
}

fn flow(spec: &Path, init: &Path, tau: f64, iters: usize, trace: &Path) -> Result<u8, Failure> {
    let parsed = parse_functional_spec(&read(spec)?, spec.parent()).map_err(Failure::from)?;
    for w in parsed.warnings {
        eprintln!("warning: {}: {w}", spec.display());
    }
    let mu0 = load_measure(init)?;
    let solver = solver()?;
    let t = gradient_descent(&solver, &parsed.value, &mu0, tau, iters)?;
    let mut csv = String::from("step,value,step_norm,leaves\n");
    for it in &t.iterates {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            it.step,
            num(it.value),
            num(it.step_norm),
            it.measure.tree().leaf_count()
        );
    }
    write(trace, &csv)?;
    let summary = json!({
        "iters": iters,
        "tau": tau,
        "smoothness": t.smoothness,
        "premises_hold": t.premises_hold,
        "monotone": t.is_monotone(1e-12),
        "initial_value": t.iterates[0].value,
        "final_value": t.last().value,
    });
    print!("{}", pretty(&summary));
    Ok(0)
}

fn check(suite: Suite, seed: u64) -> Result<u8, Failure> {
    let cfg = CheckSuiteConfig { seed, ..Default::default() };
    let report = run_suite(&cfg, suite.name())?;
    print!("{}", report.to_json());
    Ok(if report.pass { 0 } else { 4 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Distance { a, b, plan } => distance(a, b, plan.as_deref()),
        Command::Geodesic { a, b, steps, out } => geodesic(a, b, *steps, out),
        Command::Flow { spec, init, tau, iters, trace } => flow(spec, init, *tau, *iters, trace),
        Command::Check { suite, seed } => check(*suite, *seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
