//! CLI entry point: run scenarios to CSV traces and metrics, or run the
//! verification suite against a scenario.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
//! 4 verification failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ofrl::error::Error;
use ofrl::scenario::Scenario;
use ofrl::simulator::{accumulate_cost, run};
use ofrl::verifier::{monitor_weight_convergence, run_suite};

#[derive(Parser)]
#[command(
    name = "ofrl",
    version,
    about = "Output-feedback actor-critic optimal control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trace.csv and metrics.json.
    Run(RunArgs),
    /// Run the verification suite (HJB sweep, gradient oracles, integrator
    /// cross-check, excitation monitor) against a scenario.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a JSON scenario file.
    scenario: PathBuf,
    /// Output directory for trace.csv and metrics.json.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the integration step [s].
    #[arg(long, value_name = "X")]
    dt: Option<f64>,
    /// Override the simulation horizon [s].
    #[arg(long, value_name = "X")]
    t_final: Option<f64>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct VerifyArgs {
    scenario: PathBuf,
    /// Write the machine-readable report here in addition to stdout.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Serialize)]
struct Metrics {
    final_state_norm: f64,
    final_estimation_error_norm: f64,
    final_wc_error: Option<f64>,
    final_wa_error: Option<f64>,
    accumulated_cost: f64,
    gamma_eig_min: f64,
    gamma_eig_max: f64,
    excitation_lambda_min: f64,
    excitation_warning: bool,
    samples: usize,
    t_final: f64,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } | Error::NonFinite { .. } => 3,
        Error::VerificationFailed(_) => 4,
        _ => 2,
    }
}

fn dispatch() -> ofrl::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

fn load_scenario(path: &Path) -> ofrl::Result<Scenario> {
    let scenario = Scenario::from_file(path)?;
    for w in scenario.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(scenario)
}

fn apply_overrides(scenario: &mut Scenario, dt: Option<f64>, t_final: Option<f64>) {
    if let Some(dt) = dt {
        scenario.dt = dt;
    }
    if let Some(tf) = t_final {
        scenario.t_final = tf;
    }
}

fn cmd_run(args: RunArgs) -> ofrl::Result<ExitCode> {
    let mut scenario = load_scenario(&args.scenario)?;
    apply_overrides(&mut scenario, args.dt, args.t_final);
    if args.dump_config {
        println!("{}", scenario.to_json());
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = scenario.resolve()?;

    let out_dir = args
        .out
        .or_else(|| scenario.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;

    let trace = run(&cfg)?;
    let last = trace.last_index();

    let ideal = scenario
        .analytic_weights_vec()
        .or_else(|| cfg.model.analytic_weights().cloned());
    let weight_errors = ideal.map(|w| {
        let conv = monitor_weight_convergence(&trace, &w, 0.1);
        (conv.final_wc_error, conv.final_wa_error)
    });
    let lambda_peak = trace.lambda_min.iter().cloned().fold(0.0_f64, f64::max);
    let excitation_warning = lambda_peak < scenario.excitation_floor;
    let metrics = Metrics {
        final_state_norm: trace.x[last].norm(),
        final_estimation_error_norm: (&trace.x[last] - &trace.x_hat[last]).norm(),
        final_wc_error: weight_errors.map(|w| w.0),
        final_wa_error: weight_errors.map(|w| w.1),
        accumulated_cost: accumulate_cost(&trace, &cfg.cost)?,
        gamma_eig_min: trace
            .gamma_min
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min),
        gamma_eig_max: trace
            .gamma_max
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max),
        excitation_lambda_min: trace
            .lambda_min
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min),
        excitation_warning,
        samples: trace.len(),
        t_final: trace.t[last],
    };
    if excitation_warning {
        eprintln!(
            "warning: excitation level stayed below the floor {:.1e} for the whole run \
             (peak {:.3e}); weight convergence is not to be expected",
            scenario.excitation_floor, lambda_peak
        );
    }

    let trace_path = out_dir.join("trace.csv");
    let file = std::fs::File::create(&trace_path)?;
    trace.write_csv(std::io::BufWriter::new(file))?;
    let metrics_path = out_dir.join("metrics.json");
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&metrics).unwrap(),
    )?;

    println!(
        "run complete: {} samples over {} s -> {}",
        metrics.samples,
        metrics.t_final,
        trace_path.display()
    );
    println!(
        "  |x(tf)| = {:.4e}, |x~(tf)| = {:.4e}, J = {:.6}",
        metrics.final_state_norm, metrics.final_estimation_error_norm, metrics.accumulated_cost
    );
    if let Some((wc, wa)) = weight_errors {
        println!("  |Wc(tf) - W|_inf = {wc:.4e}, |Wa(tf) - W|_inf = {wa:.4e}");
    }
    println!("  metrics -> {}", metrics_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> ofrl::Result<ExitCode> {
    let scenario = load_scenario(&args.scenario)?;
    if args.dump_config {
        println!("{}", scenario.to_json());
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = scenario.resolve()?;
    let weights = scenario.analytic_weights_vec();
    let report = run_suite(&cfg, weights.as_ref())?;
    print!("{report}");
    if let Some(path) = args.report {
        std::fs::write(&path, report.to_json())?;
        println!("report -> {}", path.display());
    }
    if report.all_hard_passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Error::VerificationFailed(
            "one or more hard checks failed".into(),
        ))
    }
}
