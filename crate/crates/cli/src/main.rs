use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use cne_cli::config::{apply_overrides, parse_json, parse_value, RunConfig};
use cne_cli::diagnose::diagnose_file;
use cne_cli::oracle::run_oracles;
use cne_cli::run::{run, run_sweep, sweep_exit_code, EXIT_CONVERGED, EXIT_ERROR, EXIT_NOT_CONVERGED};

/// Cournot-Nash equilibria via entropic optimal transport.
#[derive(Parser)]
#[command(name = "cne", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Set a configuration key, e.g. `--override cost.p=4`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (defaults to available parallelism).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration.
    Solve(RunArgs),
    /// Solve every value of the configured sweep.
    Sweep(RunArgs),
    /// Check the certificates stored in a report.json.
    Diagnose { report: PathBuf },
    /// Cross-check the solvers on tiny built-in instances.
    Oracle,
}

fn load(args: &RunArgs) -> anyhow::Result<(RunConfig, PathBuf)> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?,
        None => String::new(),
    };
    let mut value = parse_json(&text)?;
    apply_overrides(&mut value, &args.overrides)?;
    let config = parse_value(value)?;
    let out = args.out.clone().unwrap_or_else(|| config.output.dir.clone());
    Ok((config, out))
}

fn threads(args: &RunArgs) -> usize {
    args.threads
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
}

fn solve_cmd(args: &RunArgs) -> anyhow::Result<u8> {
    let (config, out) = load(args)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads(args))
        .build_global()
        .ok();
    let outcome = run(&config, &out)?;
    println!(
        "{}: {}",
        out.display(),
        if outcome.converged() { "converged" } else { "not converged" }
    );
    Ok(outcome.exit_code())
}

fn sweep_cmd(args: &RunArgs) -> anyhow::Result<u8> {
    let (config, out) = load(args)?;
    let points = run_sweep(&config, &out, threads(args))?;
    for p in &points {
        let status = match &p.outcome {
            Ok(o) if o.converged() => "converged".to_string(),
            Ok(_) => "not converged".to_string(),
            Err(e) => format!("error: {e:#}"),
        };
        println!("{}: {status}", p.dir.display());
    }
    println!("{}", out.join("sweep_summary.csv").display());
    Ok(sweep_exit_code(&points))
}

fn diagnose_cmd(path: &Path) -> anyhow::Result<u8> {
    let checks = diagnose_file(path)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if checks.iter().all(|c| c.passed) { EXIT_CONVERGED } else { EXIT_NOT_CONVERGED })
}

fn oracle_cmd() -> anyhow::Result<u8> {
    let checks = run_oracles()?;
    for c in &checks {
        println!(
            "{} {}: {:e} (limit {:e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.limit
        );
    }
    Ok(if checks.iter().all(|c| c.passed) { EXIT_CONVERGED } else { EXIT_NOT_CONVERGED })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => solve_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Diagnose { report } => diagnose_cmd(report),
        Command::Oracle => oracle_cmd(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
