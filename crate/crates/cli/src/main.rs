use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use contract_forge_cli::report::write_report;
use contract_forge_cli::run::{run, Overrides};
use contract_forge_cli::scenario::parse_scenario;
use contract_forge_cli::CliError;

/// Limited-commitment contracting: solvers, equilibrium checks and
/// canonical contract spaces driven by JSON scenario files.
#[derive(Debug, Parser)]
#[command(name = "contract-forge", version)]
struct Args {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's out_dir, then
    /// $CONTRACT_FORGE_OUT, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tolerance overriding the scenario's options.tol.
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for randomized instance generation.
    #[arg(long)]
    seed: Option<u64>,
    /// Record wall time in the report (makes reports differ across runs).
    #[arg(long)]
    timing: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(args: &Args) -> Result<u8, CliError> {
    let scenario = parse_scenario(&args.scenario)?;
    let threads = args.threads.or(scenario.file.options.threads);
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    }
    let overrides = Overrides {
        tol: args.tol,
        seed: args.seed,
        timing: args.timing,
    };
    let out = run(&scenario, &overrides)?;
    let dir = args
        .out
        .clone()
        .or_else(|| scenario.file.options.out_dir.clone().map(PathBuf::from))
        .or_else(|| std::env::var_os("CONTRACT_FORGE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let files = write_report(&out.report, &out.tables, &dir)?;
    for f in &out.report.findings {
        println!("{f}");
    }
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(out.exit_code() as u8)
}
