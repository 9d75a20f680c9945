use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vpp_core::scenario::report::{reduction_pct, SUMMARY_ROWS};
use vpp_core::scenario::{export_run, load_scenario, run, ExportFormat, RunOptions, RunResult, RunStatus};

/// Caps the worker pool when `--deterministic` is not given.
const THREADS_VAR: &str = "VPP_SCHED_THREADS";

#[derive(Parser)]
#[command(name = "vpp-sched", version, about = "Day-ahead VPP scheduling with incentive-based demand response")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a scenario and write the controlled and uncontrolled reports.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the optimizer seed from the scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo samples for the objective cross-check (0 skips it).
    #[arg(long, default_value_t = 0)]
    mc_samples: usize,
    /// Run on a single worker thread.
    #[arg(long)]
    deterministic: bool,
    /// Only simulate the uncontrolled day.
    #[arg(long)]
    baseline_only: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ExportFormat::Csv,
            Format::Json => ExportFormat::Json,
            Format::Both => ExportFormat::Both,
        }
    }
}

fn thread_count(deterministic: bool) -> Result<Option<usize>, String> {
    if deterministic {
        return Ok(Some(1));
    }
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{THREADS_VAR} must be a positive integer, got {v:?}")),
        },
        Err(_) => Ok(None),
    }
}

fn print_summary(result: &RunResult) {
    println!("scenario {} (seed {})", result.scenario, result.seed);
    match result.status {
        RunStatus::Feasible => println!("status: feasible"),
        RunStatus::Infeasible { violation } => println!("status: infeasible (scaled violation {violation:.3e})"),
        RunStatus::BaselineOnly => println!("status: uncontrolled run only"),
    }
    if let Some(f) = result.best_fitness {
        println!("best fitness: {f:.6}");
    }
    println!("{:<20} {:>14} {:>14} {:>10}", "quantity", "uncontrolled", "controlled", "reduction");
    for name in SUMMARY_ROWS {
        let b = result.baseline.summary_stat(name).map(|s| s.mean);
        let c = result.controlled.as_ref().and_then(|r| r.summary_stat(name)).map(|s| s.mean);
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let red = match b.zip(c) {
            Some((b, c)) if b.abs() >= 1e-9 => format!("{:.2}%", reduction_pct(b, c)),
            _ => "-".to_string(),
        };
        println!("{name:<20} {:>14} {:>14} {red:>10}", cell(b), cell(c));
    }
    if let Some(mc) = &result.monte_carlo {
        println!("Monte-Carlo objective: mean {:.6}, std {:.6}", mc.mean[0], mc.std[0]);
    }
}

fn run_command(args: RunArgs) -> Result<ExitCode, String> {
    if let Some(n) = thread_count(args.deterministic)? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    let config = load_scenario(&args.scenario).map_err(|e| e.to_string())?;
    let options = RunOptions {
        seed: args.seed,
        mc_samples: args.mc_samples,
        baseline_only: args.baseline_only,
    };
    let result = run(config, &options).map_err(|e| e.to_string())?;
    export_run(&result, args.format.into(), &args.out).map_err(|e| e.to_string())?;
    print_summary(&result);
    println!("reports written to {}", args.out.display());
    match result.check() {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(2))
        }
    }
}

fn main() -> ExitCode {
    // Usage errors exit with 1; clap's own 2 is reserved for infeasible optima.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => run_command(args),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
