//! Single solves and parameter sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use cne_core::multipop::{solve_two_populations, SolveReport2};
use cne_core::schemes::{solve, SolveReport};
use log::info;
use rayon::prelude::*;
use serde_json::Value;

use crate::config::{build_problem, Problem, RunConfig};
use crate::output::{
    fmt_f64, measure_csv, plot_script, support_csv, support_entries, trace_csv, write_json, write_text,
    PlotSeries, ReportFile,
};

pub const EXIT_CONVERGED: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Debug, Clone)]
pub enum Outcome {
    Single {
        mu: Vec<f64>,
        report: Box<SolveReport>,
    },
    Two {
        mu: [Vec<f64>; 2],
        report: Box<SolveReport2>,
    },
}

impl Outcome {
    pub fn converged(&self) -> bool {
        match self {
            Outcome::Single { report, .. } => report.converged,
            Outcome::Two { report, .. } => report.converged,
        }
    }

    pub fn exit_code(&self) -> u8 {
        if self.converged() {
            EXIT_CONVERGED
        } else {
            EXIT_NOT_CONVERGED
        }
    }

    /// Strategy marginal of the first population.
    pub fn nu(&self) -> &[f64] {
        match self {
            Outcome::Single { report, .. } => &report.nu,
            Outcome::Two { report, .. } => &report.nu1,
        }
    }

    fn summary_fields(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        let nu_mu = |nu: &[f64], mu: &[f64]| nu.iter().zip(mu).map(|(a, b)| (a - b).abs()).sum::<f64>();
        match self {
            Outcome::Single { mu, report: r } => vec![
                r.converged.to_string(),
                r.outer_iterations.to_string(),
                r.dykstra_cycles.to_string(),
                fmt_f64(r.objective),
                opt(r.gibbs_residual),
                opt(r.exploitability),
                fmt_f64(r.concentration),
                fmt_f64(nu_mu(&r.nu, mu)),
                String::new(),
                fmt_f64(r.wall_seconds),
            ],
            Outcome::Two { mu, report: r } => {
                let gibbs = match r.gibbs_residual {
                    [Some(a), Some(b)] => Some(a.max(b)),
                    _ => None,
                };
                vec![
                    r.converged.to_string(),
                    r.outer_iterations.to_string(),
                    r.dykstra_cycles.to_string(),
                    fmt_f64(r.objective),
                    opt(gibbs),
                    String::new(),
                    fmt_f64(r.concentration[0]),
                    fmt_f64(nu_mu(&r.nu1, &mu[0])),
                    fmt_f64(r.overlap),
                    fmt_f64(r.wall_seconds),
                ]
            }
        }
    }
}

pub const SUMMARY_HEADER: &str =
    "index,value,converged,outer_iterations,dykstra_cycles,objective,gibbs_residual,exploitability,concentration,nu_mu_l1,overlap,wall_seconds";

/// Solves `config` and writes every artifact into `out`.
pub fn run(config: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let start = Instant::now();
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let problem = build_problem(config)?;
    let scheme = config.scheme_config();
    let threshold = config.output.support_threshold;
    let outcome = match &problem {
        Problem::Single(p) => {
            let report = solve(p, &scheme)?;
            Outcome::Single {
                mu: p.mu.weights().to_vec(),
                report: Box::new(report),
            }
        }
        Problem::Two(s) => {
            let report = solve_two_populations(s, &scheme)?;
            Outcome::Two {
                mu: [s.pop1.mu.weights().to_vec(), s.pop2.mu.weights().to_vec()],
                report: Box::new(report),
            }
        }
    };
    let space = problem.space();
    let wall = start.elapsed().as_secs_f64();
    match &outcome {
        Outcome::Single { mu, report } => {
            write_text(&out.join("mu.csv"), &measure_csv(space, mu))?;
            write_text(&out.join("nu.csv"), &measure_csv(space, &report.nu))?;
            write_text(&out.join("gamma_support.csv"), &support_csv(space, space, &report.gamma, threshold))?;
            write_text(&out.join("trace.csv"), &trace_csv(&report.trace))?;
            let file = ReportFile {
                version: env!("CARGO_PKG_VERSION"),
                kind: "single",
                wall_seconds: wall,
                config,
                report: report.as_ref(),
            };
            write_json(&out.join("report.json"), &file)?;
            let series = [
                PlotSeries { name: "mu", weights: mu, color: "blue", dashed: false },
                PlotSeries { name: "nu", weights: &report.nu, color: "red", dashed: false },
            ];
            let supports = [("gamma", support_entries(&report.gamma, threshold))];
            write_text(&out.join("plot.gp"), &plot_script(space, &series, &supports))?;
        }
        Outcome::Two { mu, report } => {
            write_text(&out.join("mu.csv"), &measure_csv(space, &mu[0]))?;
            write_text(&out.join("mu2.csv"), &measure_csv(space, &mu[1]))?;
            write_text(&out.join("nu.csv"), &measure_csv(space, &report.nu1))?;
            write_text(&out.join("nu2.csv"), &measure_csv(space, &report.nu2))?;
            write_text(&out.join("gamma_support.csv"), &support_csv(space, space, &report.gamma1, threshold))?;
            write_text(&out.join("gamma2_support.csv"), &support_csv(space, space, &report.gamma2, threshold))?;
            write_text(&out.join("trace.csv"), &trace_csv(&report.trace))?;
            let file = ReportFile {
                version: env!("CARGO_PKG_VERSION"),
                kind: "two_population",
                wall_seconds: wall,
                config,
                report: report.as_ref(),
            };
            write_json(&out.join("report.json"), &file)?;
            let series = [
                PlotSeries { name: "mu1", weights: &mu[0], color: "blue", dashed: false },
                PlotSeries { name: "mu2", weights: &mu[1], color: "blue", dashed: true },
                PlotSeries { name: "nu1", weights: &report.nu1, color: "red", dashed: false },
                PlotSeries { name: "nu2", weights: &report.nu2, color: "red", dashed: true },
            ];
            let supports = [
                ("gamma1", support_entries(&report.gamma1, threshold)),
                ("gamma2", support_entries(&report.gamma2, threshold)),
            ];
            write_text(&out.join("plot.gp"), &plot_script(space, &series, &supports))?;
        }
    }
    info!(
        "{}: converged = {} in {:.3}s",
        out.display(),
        outcome.converged(),
        wall
    );
    Ok(outcome)
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn dir_name(index: usize, v: &Value) -> String {
    let label: String = value_label(v)
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{index:02}_{label}")
}

/// One sweep point's directory and result.
pub struct SweepPoint {
    pub value: Value,
    pub dir: PathBuf,
    pub outcome: anyhow::Result<Outcome>,
}

/// Runs every sweep value in its own subdirectory of `out`, at most
/// `threads` at a time, and writes `sweep_summary.csv`.
pub fn run_sweep(config: &RunConfig, out: &Path, threads: usize) -> anyhow::Result<Vec<SweepPoint>> {
    let sweep = config
        .sweep
        .as_ref()
        .context("configuration has no `sweep` section")?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let configs = sweep
        .values
        .iter()
        .map(|v| config.with_sweep_value(&sweep.parameter, v))
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("sweep over `{}`", sweep.parameter))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    let points: Vec<SweepPoint> = pool.install(|| {
        configs
            .par_iter()
            .zip(sweep.values.par_iter())
            .enumerate()
            .map(|(k, (c, v))| {
                let dir = out.join(dir_name(k, v));
                SweepPoint {
                    value: v.clone(),
                    outcome: run(c, &dir),
                    dir,
                }
            })
            .collect()
    });

    let mut summary = format!("{SUMMARY_HEADER}\n");
    for (k, p) in points.iter().enumerate() {
        let label = value_label(&p.value).replace(',', ";");
        match &p.outcome {
            Ok(o) => {
                let _ = writeln!(summary, "{k},{label},{}", o.summary_fields().join(","));
            }
            Err(e) => {
                log::error!("sweep point {k} ({label}) failed: {e:#}");
                let _ = writeln!(summary, "{k},{label},error,,,,,,,,,");
            }
        }
    }
    write_text(&out.join("sweep_summary.csv"), &summary)?;
    Ok(points)
}

/// Exit code of a sweep: errors dominate nonconvergence.
pub fn sweep_exit_code(points: &[SweepPoint]) -> u8 {
    if points.iter().any(|p| p.outcome.is_err()) {
        EXIT_ERROR
    } else if points.iter().any(|p| !p.outcome.as_ref().map(Outcome::converged).unwrap_or(false)) {
        EXIT_NOT_CONVERGED
    } else {
        EXIT_CONVERGED
    }
}
