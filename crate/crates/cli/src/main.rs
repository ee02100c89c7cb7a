//! Command-line harness: simulate the anticipating McKean-Vlasov dynamics,
//! optimize an open-loop control, or run a named verification suite, all
//! driven by a single TOML config. Outputs are deterministic: identical
//! (config, seed) produce byte-identical CSV/JSON regardless of the worker
//! thread count.

mod config;
mod json;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mvsde_core::export::{
    fmt_f64, write_adjoint_csv, write_control_csv, write_ensemble_csv, write_trace_csv,
};
use mvsde_core::forward::{solve_forward, FixedPointReport, TimeGrid};
use mvsde_core::adjoint::{assemble_control_adjoint, solve_adjoint};
use mvsde_core::measure::{wasserstein2, EmpiricalMeasure};
use mvsde_core::optimizer::{optimize, OptimizeParams};
use mvsde_core::problems::Control;
use mvsde_core::Error as CoreError;

use config::RunConfig;

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_OPTIMIZER: u8 = 3;

#[derive(Parser)]
#[command(name = "mvsde", version, about = "Anticipating McKean-Vlasov SDE toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward particle system and export the ensemble.
    Simulate(CommonArgs),
    /// Run the projected-gradient control optimization.
    Optimize(CommonArgs),
    /// Run a named verification suite and compare against its bounds.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// One of: contraction-forward, contraction-bsde, lemma-diffquot,
        /// duality, gradient, wasserstein.
        #[arg(long)]
        suite: String,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap the rayon worker count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: $MVSDE_OUT_DIR or the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate(args) => with_setup(&args, cmd_simulate),
        Command::Optimize(args) => with_setup(&args, cmd_optimize),
        Command::Verify { common, suite } => {
            with_setup(&common, |config, out| cmd_verify(config, out, &suite))
        }
    };
    ExitCode::from(code)
}

fn with_setup(args: &CommonArgs, run: impl FnOnce(&RunConfig, &Path) -> u8) -> u8 {
    if let Some(threads) = args.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let text = match fs::read_to_string(&args.config) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    let mut config = match RunConfig::from_toml(&text) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os("MVSDE_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = fs::create_dir_all(&out) {
        eprintln!("error: cannot create output directory {}: {e}", out.display());
        return EXIT_CONFIG;
    }
    if let Err(code) = write_file(&out.join("config_resolved.toml"), &config.to_toml()) {
        return code;
    }
    run(&config, &out)
}

fn solver_exit(e: &CoreError) -> u8 {
    match e {
        CoreError::PicardDivergence
        | CoreError::BsdeDivergence
        | CoreError::NoConvergence { .. }
        | CoreError::NonFiniteState { .. }
        | CoreError::NoiseSanity(_) => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), u8> {
    fs::write(path, content).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        EXIT_CONFIG
    })
}

#[derive(Serialize)]
struct SimulateSummary {
    mean: f64,
    variance: f64,
    /// W₂ between the first and second half of the terminal cloud; a
    /// self-consistency statistic that vanishes as M grows.
    w2_half_split: f64,
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    seed: u64,
    grid: &'a TimeGrid,
    report: &'a FixedPointReport,
    summary: &'a SimulateSummary,
}

fn cmd_simulate(config: &RunConfig, out: &Path) -> u8 {
    let spec = match config.problem_spec() {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let grid = match config.time_grid() {
        Ok(grid) => grid,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let control = Control::constant(grid, spec.clamp_control(config.optimize.u_init));
    let result = solve_forward(
        &spec,
        &control,
        config.particles,
        config.seed,
        config.tolerances.picard_tol,
        200,
        config.picard_mode.into(),
    );
    let (ens, report) = match result {
        Ok(pair) => pair,
        Err(e) => {
            eprintln!("error: {e}");
            return solver_exit(&e);
        }
    };
    if !report.converged {
        eprintln!(
            "error: forward solver did not converge within tolerance (last residual {})",
            report.residuals.last().copied().unwrap_or(f64::NAN)
        );
        return EXIT_SOLVER;
    }

    let n = grid.n_steps();
    let terminal: Vec<f64> = (0..ens.particles()).map(|i| ens.state(i, n)).collect();
    let m = terminal.len();
    let mean = terminal.iter().sum::<f64>() / m as f64;
    let variance = terminal.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m as f64;
    let half = m / 2;
    let w2_half_split = if half >= 1 {
        let first = EmpiricalMeasure::new(terminal[..half].to_vec()).unwrap();
        let second = EmpiricalMeasure::new(terminal[half..2 * half].to_vec()).unwrap();
        wasserstein2(&first, &second).unwrap()
    } else {
        0.0
    };
    let summary = SimulateSummary { mean, variance, w2_half_split };

    let mut csv = Vec::new();
    if write_ensemble_csv(&mut csv, &ens).is_err() {
        return EXIT_CONFIG;
    }
    if let Err(code) =
        write_file(&out.join("ensemble.csv"), &String::from_utf8(csv).unwrap())
    {
        return code;
    }
    let report_json = json::to_json_string(&SimulateReport {
        seed: config.seed,
        grid: &grid,
        report: &report,
        summary: &summary,
    });
    if let Err(code) = write_file(&out.join("simulate_report.json"), &report_json) {
        return code;
    }
    println!(
        "simulate: iterations={} mean={} variance={} w2_half_split={}",
        report.iterations,
        fmt_f64(summary.mean),
        fmt_f64(summary.variance),
        fmt_f64(summary.w2_half_split)
    );
    EXIT_OK
}

fn cmd_optimize(config: &RunConfig, out: &Path) -> u8 {
    let spec = match config.problem_spec() {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let grid = match config.time_grid() {
        Ok(grid) => grid,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let u_init = Control::constant(grid, spec.clamp_control(config.optimize.u_init));
    let params = OptimizeParams {
        grad_tol: config.tolerances.grad_tol,
        max_outer: config.optimize.max_outer,
        picard_tol: config.tolerances.picard_tol,
        bsde_tol: config.tolerances.bsde_tol,
        max_iter: 300,
        basis_degree: config.basis_degree,
        mode: config.picard_mode.into(),
        initial_step: 1.0,
    };
    let (control, report, trace) =
        match optimize(&spec, &u_init, config.particles, config.seed, &params) {
            Ok(result) => result,
            Err(e) => {
                eprintln!("error: {e}");
                return solver_exit(&e);
            }
        };

    // Costate export at the final control.
    let adjoint_artifacts = (|| -> Result<(String, String), CoreError> {
        let (ens, _) = solve_forward(
            &spec,
            &control,
            config.particles,
            config.seed,
            config.tolerances.picard_tol,
            300,
            config.picard_mode.into(),
        )?;
        let assembly = assemble_control_adjoint(&spec, &ens, &control)?;
        let adj = solve_adjoint(
            &ens,
            &assembly,
            config.tolerances.bsde_tol,
            300,
            config.basis_degree,
        )?;
        let mut csv = Vec::new();
        write_adjoint_csv(&mut csv, &ens, &adj)
            .map_err(|_| CoreError::InvalidInput("adjoint csv".into()))?;
        Ok((String::from_utf8(csv).unwrap(), json::to_json_string(&adj.report)))
    })();
    let (adjoint_csv, adjoint_report) = match adjoint_artifacts {
        Ok(pair) => pair,
        Err(e) => {
            eprintln!("error: {e}");
            return solver_exit(&e);
        }
    };

    let mut trace_csv = Vec::new();
    let mut control_csv = Vec::new();
    if write_trace_csv(&mut trace_csv, &trace).is_err()
        || write_control_csv(&mut control_csv, &control).is_err()
    {
        return EXIT_CONFIG;
    }
    for (name, content) in [
        ("trace.csv", String::from_utf8(trace_csv).unwrap()),
        ("control.csv", String::from_utf8(control_csv).unwrap()),
        ("optimality.json", json::to_json_string(&report)),
        ("adjoint.csv", adjoint_csv),
        ("adjoint_report.json", adjoint_report),
    ] {
        if let Err(code) = write_file(&out.join(name), &content) {
            return code;
        }
    }

    let last = trace.last().expect("trace has at least one row");
    println!(
        "optimize: iterations={} J={} max_grad={} passes={} stalled={}",
        last.iteration,
        fmt_f64(last.cost),
        fmt_f64(last.max_gradient),
        report.passes,
        report.stalled
    );
    if report.passes {
        EXIT_OK
    } else {
        if report.stalled {
            eprintln!("error: line search stalled before reaching optimality");
        } else {
            eprintln!(
                "error: optimality not reached within max_outer={} (violated cells: {})",
                config.optimize.max_outer,
                report.violations.len()
            );
        }
        EXIT_OPTIMIZER
    }
}

fn cmd_verify(config: &RunConfig, out: &Path, suite: &str) -> u8 {
    let report = match verify::run_suite(suite, config) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let path = out.join(format!("verify_{suite}.json"));
    if let Err(code) = write_file(&path, &json::to_json_string(&report)) {
        return code;
    }
    for check in &report.checks {
        println!(
            "verify {}: {} measured={} bound={} {}",
            suite,
            check.name,
            fmt_f64(check.measured),
            fmt_f64(check.bound),
            if check.pass { "PASS" } else { "FAIL" }
        );
    }
    if report.pass {
        println!("verify {suite}: PASS");
        EXIT_OK
    } else {
        println!("verify {suite}: FAIL");
        EXIT_SOLVER
    }
}

/// Exit-code contract, used by the integration tests.
#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(EXIT_OK, 0);
        assert_eq!(EXIT_CONFIG, 1);
        assert_eq!(EXIT_SOLVER, 2);
        assert_eq!(EXIT_OPTIMIZER, 3);
    }
}
