use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cne_cli::config::parse_value;
use serde_json::Value;

fn cne(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cne"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config_path(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn weights(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "weight").unwrap();
    lines
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn solve_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = cne(&["solve", "--out", out.to_str().unwrap(), "--override", "domain.n=20"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["mu.csv", "nu.csv", "gamma_support.csv", "trace.csv", "report.json", "plot.gp"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let nu = weights(&out.join("nu.csv"));
    assert_eq!(nu.len(), 20);
    assert!((nu.iter().sum::<f64>() - 1.0).abs() <= 1e-9);

    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["converged"], Value::Bool(true));
    let saved = parse_value(report["config"].clone()).unwrap();
    assert_eq!(saved.domain.n, 20);
    let again = parse_value(serde_json::to_value(&saved).unwrap()).unwrap();
    assert_eq!(serde_json::to_value(&again).unwrap(), report["config"]);

    let d = cne(&["diagnose", out.join("report.json").to_str().unwrap()]);
    assert_eq!(d.status.code(), Some(0), "{}", String::from_utf8_lossy(&d.stdout));
    assert!(String::from_utf8_lossy(&d.stdout).contains("PASS gibbs_residual"));
}

#[test]
fn two_population_solve_writes_both_marginals() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pair");
    let o = cne(&[
        "solve",
        "--config",
        &config_path("fig8.json"),
        "--out",
        out.to_str().unwrap(),
        "--override",
        "domain.n=24",
        "--override",
        "tolerances.outer_tol=1e-6",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["nu.csv", "nu2.csv", "mu2.csv", "gamma2_support.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    for f in ["nu.csv", "nu2.csv"] {
        let w = weights(&out.join(f));
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn sweep_creates_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = cne(&[
        "sweep",
        "--config",
        &config_path("fig3.json"),
        "--out",
        out.to_str().unwrap(),
        "--override",
        "domain.n=30",
        "--threads",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dirs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(dirs, 9);
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 10);
    assert!(summary.lines().skip(1).all(|l| l.split(',').nth(2) == Some("true")));
}

#[test]
fn negative_epsilon_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = cne(&["solve", "--out", dir.path().to_str().unwrap(), "--override", "epsilon=-0.1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));
}

#[test]
fn all_violations_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"epsilon": 0, "cost": {"p": -1}, "bogus": 3}"#).unwrap();
    let o = cne(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    for key in ["epsilon", "cost.p", "bogus"] {
        assert!(err.contains(key), "{key} not reported in {err}");
    }
}

#[test]
fn exhausted_budget_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = cne(&[
        "solve",
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "domain.n=20",
        "--override",
        "tolerances.max_cycles=2",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let d = cne(&["diagnose", dir.path().join("report.json").to_str().unwrap()]);
    assert_eq!(d.status.code(), Some(2));
}

#[test]
fn oracle_subcommand_passes() {
    let o = cne(&["oracle"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 3);
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut names: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for name in &names {
        let text = fs::read_to_string(dir.join(name)).unwrap();
        cne_cli::parse_config(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let fig1 = cne_cli::parse_config(&fs::read_to_string(dir.join("fig1.json")).unwrap()).unwrap();
    assert_eq!(fig1.epsilon, 0.05);
    assert_eq!(fig1.domain.n, 500);
    assert_eq!(fig1.domain.bounds, vec![[0.0, 16.0]]);
    assert_eq!(fig1.interaction.scale, 1e-4);
    assert_eq!(fig1.interaction.exponent, 2.0);
    assert_eq!(fig1.congestion.exponent, 8.0);
    assert!(fig1.congestion.density);
    let pot = fig1.potential.unwrap();
    assert_eq!(pot.center, vec![9.0]);
    assert_eq!(pot.exponent, 4.0);
}
