//! Re-checks the certificates recorded in a `report.json`.

use std::path::Path;

use anyhow::Context;
use serde_json::Value;

/// First-marginal residual every report must meet.
pub const MARGINAL_CERTIFICATE: f64 = 1e-12;
pub const MASS_CERTIFICATE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn num(v: &Value) -> Option<f64> {
    v.as_f64()
}

fn nums(v: &Value) -> Vec<Option<f64>> {
    match v {
        Value::Array(a) => a.iter().map(num).collect(),
        other => vec![num(other)],
    }
}

/// Certificate checks for a parsed report file.
pub fn check_report(file: &Value) -> anyhow::Result<Vec<Check>> {
    let report = file.get("report").context("missing `report`")?;
    let outer_tol = file
        .pointer("/config/tolerances/outer_tol")
        .and_then(num)
        .context("missing config.tolerances.outer_tol")?;
    let mut checks = Vec::new();
    let converged = report.get("converged").and_then(Value::as_bool).unwrap_or(false);
    checks.push(Check {
        name: "converged".into(),
        passed: converged,
        detail: converged.to_string(),
    });

    let target = 10.0 * outer_tol;
    let gibbs = nums(report.get("gibbs_residual").unwrap_or(&Value::Null));
    checks.push(Check {
        name: "gibbs_residual".into(),
        passed: gibbs.iter().all(|g| g.is_some_and(|g| g <= target)),
        detail: format!("{gibbs:?} (limit {target:e})"),
    });

    let marg = nums(report.get("marginal_residual").unwrap_or(&Value::Null));
    checks.push(Check {
        name: "first_marginal".into(),
        passed: marg.iter().all(|m| m.is_some_and(|m| m <= MARGINAL_CERTIFICATE)),
        detail: format!("{marg:?} (limit {MARGINAL_CERTIFICATE:e})"),
    });

    for key in ["nu", "nu1", "nu2"] {
        if let Some(Value::Array(a)) = report.get(key) {
            let total: f64 = a.iter().filter_map(num).sum();
            checks.push(Check {
                name: format!("{key}_mass"),
                passed: (total - 1.0).abs() <= MASS_CERTIFICATE,
                detail: format!("sum = {total}"),
            });
        }
    }
    Ok(checks)
}

pub fn diagnose_file(path: &Path) -> anyhow::Result<Vec<Check>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let file: Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    check_report(&file)
}
