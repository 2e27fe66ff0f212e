use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use srvrc::diagnostics::{finite_diff_grad_check, hvp_check, local_min_certificate};
use srvrc::problem::{batch_hvp, full_gradient, full_value};
use srvrc::{run, Algorithm, ExitStatus, FiniteSumProblem, IndexBatch, OracleCounter, RunResult, Vector};

use crate::config::{effective_rho, guarantee_constant, LoadedConfig};

/// Exit code for a converged run or a passing check.
pub const EXIT_OK: i32 = 0;
/// Exit code for errors of any kind.
pub const EXIT_ERROR: i32 = 1;
/// Exit code for a run that used its whole iteration budget.
pub const EXIT_BUDGET: i32 = 2;

/// Largest error `check` accepts.
pub const CHECK_TOLERANCE: f64 = 1e-4;
pub const CHECK_POINTS: usize = 5;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub exit: ExitStatus,
    /// Outer iterations performed, `T*`.
    pub iterations: usize,
    pub max_iters: usize,
    pub eps: f64,
    pub rho: f64,
    pub final_f: f64,
    /// Smallest objective value seen along the run.
    pub min_f: f64,
    pub grad_norm: f64,
    pub lambda_min: f64,
    pub mu: f64,
    /// `c·ε^{3/2}` with the algorithm's guarantee constant.
    pub mu_target: f64,
    pub counters: OracleCounter,
    /// Oracle counts when an iterate first met `μ ≤ mu_target`. Only
    /// available when iterates were recorded.
    pub counters_at_target: Option<OracleCounter>,
    pub diagnostic_value_calls: u64,
    pub wall_ms: f64,
}

/// Outcome of one configured run.
pub struct RunOutcome {
    pub summary: RunSummary,
    pub result: RunResult,
}

/// Runs a loaded config. `track_target` records iterates so that the
/// counts at the first iterate meeting the guarantee can be reported.
pub fn execute(loaded: &LoadedConfig, track_target: bool) -> Result<RunOutcome> {
    let problem = loaded.build_problem()?;
    let mut solver = loaded.solver_config(problem.as_ref())?;
    solver.keep_iterates |= track_target;
    let algorithm = loaded.config.algorithm;
    let mut rng = ChaCha8Rng::seed_from_u64(loaded.config.seed);
    let start = Instant::now();
    let result = run(algorithm, problem.as_ref(), &solver, &mut rng)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    let rho = effective_rho(&solver, problem.as_ref());
    let cert = local_min_certificate(problem.as_ref(), &result.x_out, solver.eps, rho)?;
    let final_f = full_value(problem.as_ref(), &result.x_out);
    let min_f = result.trace.rows.iter().map(|r| r.f).fold(final_f, f64::min);
    let mu_target = guarantee_constant(algorithm) * solver.eps.powf(1.5);
    let counters_at_target = if track_target {
        first_hit(
            problem.as_ref(),
            &solver_start(&solver, problem.dim()),
            &result,
            rho,
            mu_target,
        )?
    } else {
        None
    };
    let summary = RunSummary {
        name: loaded.name.clone(),
        algorithm,
        seed: loaded.config.seed,
        exit: result.exit,
        iterations: result.iterations,
        max_iters: solver.max_iters,
        eps: solver.eps,
        rho,
        final_f,
        min_f,
        grad_norm: cert.grad_norm,
        lambda_min: cert.lambda_min,
        mu: cert.mu,
        mu_target,
        counters: result.counters,
        counters_at_target,
        diagnostic_value_calls: result.diagnostic_value_calls,
        wall_ms,
    };
    Ok(RunOutcome { summary, result })
}

fn solver_start(solver: &srvrc::SolverConfig, d: usize) -> Vector {
    match &solver.x0 {
        Some(x) => Vector::from_column_slice(x),
        None => Vector::zeros(d),
    }
}

/// Counters at the first point of the run (start included) with `μ ≤ target`.
fn first_hit(
    problem: &dyn FiniteSumProblem,
    x0: &Vector,
    result: &RunResult,
    rho: f64,
    target: f64,
) -> Result<Option<OracleCounter>> {
    let meets = |x: &Vector| -> Result<bool> {
        // μ ≥ ‖∇F‖^{3/2}, so the gradient alone rules most points out
        if full_gradient(problem, x)?.norm().powf(1.5) > target {
            return Ok(false);
        }
        Ok(local_min_certificate(problem, x, 1.0, rho)?.mu <= target)
    };
    if meets(x0)? {
        return Ok(Some(OracleCounter::new()));
    }
    for (row, x) in result.trace.rows.iter().zip(&result.trace.iterates) {
        if meets(x)? {
            return Ok(Some(OracleCounter {
                grad_calls: row.grad_calls,
                hess_calls: row.hess_calls,
                hvp_calls: row.hvp_calls,
            }));
        }
    }
    Ok(None)
}

fn write_outputs(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let trace = dir.join("trace.csv");
    let file = std::fs::File::create(&trace).with_context(|| format!("creating {}", trace.display()))?;
    outcome.result.trace.write_csv(std::io::BufWriter::new(file))?;
    let summary = dir.join("summary.json");
    std::fs::write(&summary, serde_json::to_string_pretty(&outcome.summary)? + "\n")
        .with_context(|| format!("writing {}", summary.display()))?;
    Ok(())
}

fn exit_code(exit: ExitStatus) -> i32 {
    match exit {
        ExitStatus::Converged => EXIT_OK,
        ExitStatus::BudgetExhausted => EXIT_BUDGET,
    }
}

fn report_error(err: &anyhow::Error) -> i32 {
    eprintln!("error: {err:#}");
    EXIT_ERROR
}

/// `run <config>`: writes `trace.csv` and `summary.json`.
pub fn cmd_run(config_path: &Path) -> i32 {
    let go = || -> Result<i32> {
        let loaded = LoadedConfig::load(config_path)?;
        let outcome = execute(&loaded, false)?;
        write_outputs(&loaded.output_dir, &outcome)?;
        let s = &outcome.summary;
        println!(
            "{}: {} after {} iterations, f = {:.6e}, mu = {:.3e}, grad/hess/hvp calls = {}/{}/{}",
            s.name,
            match s.exit {
                ExitStatus::Converged => "converged",
                ExitStatus::BudgetExhausted => "budget exhausted",
            },
            s.iterations,
            s.final_f,
            s.mu,
            s.counters.grad_calls,
            s.counters.hess_calls,
            s.counters.hvp_calls
        );
        println!("wrote {}", loaded.output_dir.display());
        Ok(exit_code(s.exit))
    };
    go().unwrap_or_else(|e| report_error(&e))
}

/// Worst errors found by [`check_problem`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    pub grad_error: f64,
    pub hvp_error: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.grad_error <= CHECK_TOLERANCE && self.hvp_error <= CHECK_TOLERANCE
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else {
            EXIT_ERROR
        }
    }
}

/// HVP against the dense Hessian when one exists, else against central
/// differences of the full gradient.
fn hvp_error(problem: &dyn FiniteSumProblem, x: &Vector, v: &Vector) -> Result<f64> {
    if problem.has_explicit_hessian() {
        return Ok(hvp_check(problem, x, v)?);
    }
    let mut scratch = OracleCounter::new();
    let hv = batch_hvp(problem, x, &IndexBatch::full(problem.num_components()), v, &mut scratch)?;
    let up = full_gradient(problem, &(x + v * FD_STEP))?;
    let down = full_gradient(problem, &(x - v * FD_STEP))?;
    let fd = (up - down) / (2.0 * FD_STEP);
    Ok((hv - &fd).norm() / (1.0 + fd.norm()))
}

/// Derivative checks at [`CHECK_POINTS`] standard normal points drawn from
/// `seed`.
pub fn check_problem(problem: &dyn FiniteSumProblem, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = problem.dim();
    let mut report = CheckReport {
        grad_error: 0.0,
        hvp_error: 0.0,
    };
    for k in 0..CHECK_POINTS {
        let x = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = finite_diff_grad_check(problem, &x, FD_STEP)?;
        let h = hvp_error(problem, &x, &v)?;
        println!("point {k}: gradient error {g:.3e}, hvp error {h:.3e}");
        report.grad_error = report.grad_error.max(g);
        report.hvp_error = report.hvp_error.max(h);
    }
    println!(
        "max gradient error {:.3e}, max hvp error {:.3e}, tolerance {:.0e}: {}",
        report.grad_error,
        report.hvp_error,
        CHECK_TOLERANCE,
        if report.passed() { "ok" } else { "FAILED" }
    );
    Ok(report)
}

/// `check <config>`: exit 0 iff every derivative error is within tolerance.
pub fn cmd_check(config_path: &Path) -> i32 {
    let go = || -> Result<i32> {
        let loaded = LoadedConfig::load(config_path)?;
        let problem = loaded.build_problem()?;
        Ok(check_problem(problem.as_ref(), loaded.config.seed)?.exit_code())
    };
    go().unwrap_or_else(|e| report_error(&e))
}

/// Header of the comparison table written by `compare`.
pub const COMPARE_COLUMNS: [&str; 13] = [
    "config",
    "algorithm",
    "status",
    "f_gap",
    "mu",
    "grad_calls",
    "hess_calls",
    "hvp_calls",
    "grad_calls_at_target",
    "hess_calls_at_target",
    "hvp_calls_at_target",
    "iterations",
    "wall_ms",
];

/// Name of the table `compare` writes into the config directory.
pub const COMPARE_FILE: &str = "comparison.csv";

/// `*.json` files directly inside `dir`, sorted by name.
pub fn config_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Builds the comparison table. The gap baseline is the smallest objective
/// value seen across all successful runs.
pub fn comparison_table(names: &[String], runs: &[std::result::Result<RunSummary, String>]) -> String {
    let baseline = runs
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .map(|s| s.min_f)
        .fold(f64::INFINITY, f64::min);
    let opt = |c: Option<u64>| c.map(|v| v.to_string()).unwrap_or_default();
    let mut out = COMPARE_COLUMNS.join(",") + "\n";
    for (name, run) in names.iter().zip(runs) {
        match run {
            Ok(s) => {
                let t = s.counters_at_target;
                let _ = writeln!(
                    out,
                    "{},{},{},{:e},{:e},{},{},{},{},{},{},{},{:.3}",
                    name,
                    s.algorithm.name(),
                    match s.exit {
                        ExitStatus::Converged => "converged",
                        ExitStatus::BudgetExhausted => "budget_exhausted",
                    },
                    s.final_f - baseline,
                    s.mu,
                    s.counters.grad_calls,
                    s.counters.hess_calls,
                    s.counters.hvp_calls,
                    opt(t.map(|c| c.grad_calls)),
                    opt(t.map(|c| c.hess_calls)),
                    opt(t.map(|c| c.hvp_calls)),
                    s.iterations,
                    s.wall_ms
                );
            }
            Err(_) => {
                let _ = writeln!(out, "{name},,failed,,,,,,,,,,");
            }
        }
    }
    out
}

/// `compare <dir>`: runs every config in `dir` in parallel and writes
/// `comparison.csv` there. Exit 1 if the directory has no configs or any run
/// fails.
pub fn cmd_compare(dir: &Path) -> i32 {
    let go = || -> Result<i32> {
        let files = config_files(dir)?;
        if files.is_empty() {
            bail!("no *.json configs in {}", dir.display());
        }
        let runs: Vec<std::result::Result<RunSummary, String>> = std::thread::scope(|scope| {
            let handles: Vec<_> = files
                .iter()
                .map(|path| {
                    scope.spawn(move || -> Result<RunSummary> {
                        let loaded = LoadedConfig::load(path)?;
                        let outcome = execute(&loaded, true)?;
                        write_outputs(&loaded.output_dir, &outcome)?;
                        Ok(outcome.summary)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| match h.join() {
                    Ok(r) => r.map_err(|e| format!("{e:#}")),
                    Err(_) => Err("run panicked".to_string()),
                })
                .collect()
        });
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
            .collect();
        for (name, run) in names.iter().zip(&runs) {
            if let Err(e) = run {
                eprintln!("error: {name}: {e}");
            }
        }
        let table = comparison_table(&names, &runs);
        let out = dir.join(COMPARE_FILE);
        std::fs::write(&out, &table).with_context(|| format!("writing {}", out.display()))?;
        print!("{table}");
        Ok(if runs.iter().all(|r| r.is_ok()) {
            EXIT_OK
        } else {
            EXIT_ERROR
        })
    };
    go().unwrap_or_else(|e| report_error(&e))
}
