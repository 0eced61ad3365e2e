//! Single-population solvers: the implicit three-prox scheme and the
//! semi-implicit outer loop that linearizes the interaction term.

use std::sync::Arc;
use std::time::Instant;

use log::{debug, warn};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    concentration_diagnostic, coupling_objective, exploitability, gibbs_residual, total_cost_at,
};
use crate::dykstra::{Dykstra, DykstraConfig, ProxList, TraceRow};
use crate::error::{Error, Result};
use crate::kl::Coupling;
use crate::model::{CongestionKind, CostMatrix, ProbabilityVector, ProblemSpec};
use crate::prox::{
    CongestionProx, FirstMarginalProx, InteractionProx, NewtonConfig, Prox, StronglyConvexRemainder,
};

/// Inner tolerances are never tightened below this.
pub const MIN_INNER_TOL: f64 = 1e-14;
/// Outer steps without a new smallest change before the loop gives up.
pub const OSCILLATION_WINDOW: usize = 50;
/// Converged solves certify `gibbs_residual <= GIBBS_FACTOR * outer_tol`.
pub const GIBBS_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Implicit,
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub dykstra: DykstraConfig,
    pub newton: NewtonConfig,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Implicit,
            outer_tol: 1e-8,
            max_outer: 5000,
            dykstra: DykstraConfig::default(),
            newton: NewtonConfig::default(),
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        self.dykstra.validate()?;
        if !(self.outer_tol > 0.0) {
            return Err(Error::InvalidConfig("outer_tol must be > 0".into()));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidConfig("max_outer must be >= 1".into()));
        }
        if !(self.newton.tol > 0.0) || self.newton.max_steps == 0 {
            return Err(Error::InvalidConfig("Newton tolerance and step cap must be positive".into()));
        }
        Ok(())
    }

    /// Gibbs residual required for a solve to count as converged.
    pub fn gibbs_target(&self) -> f64 {
        GIBBS_FACTOR * self.outer_tol
    }
}

/// One outer iteration of the semi-implicit loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterRow {
    pub iteration: usize,
    pub nu_change: f64,
    pub inner_cycles: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub scheme: Scheme,
    pub nu: Vec<f64>,
    #[serde(skip)]
    pub gamma: Coupling,
    pub converged: bool,
    pub outer_iterations: usize,
    pub dykstra_cycles: usize,
    pub total_prox_evaluations: usize,
    pub prox_per_cycle: usize,
    pub nu_change: f64,
    pub marginal_residual: f64,
    pub gibbs_residual: Option<f64>,
    pub objective: f64,
    pub exploitability: Option<f64>,
    pub concentration: f64,
    pub norminter: f64,
    pub norm_condition_satisfied: bool,
    pub strongly_convex_split: bool,
    pub inner_tol_nu: f64,
    pub wall_seconds: f64,
    pub warnings: Vec<String>,
    pub trace: Vec<TraceRow>,
    pub outer_trace: Vec<OuterRow>,
}

/// Rows of `mu` with positive mass; solvers work on these only.
pub(crate) struct ActiveRows {
    rows: Vec<usize>,
    n: usize,
    log_mu: Vec<f64>,
}

impl ActiveRows {
    pub(crate) fn new(mu: &ProbabilityVector) -> Self {
        let rows: Vec<usize> = (0..mu.len()).filter(|&i| mu.weights()[i] > 0.0).collect();
        let log_mu = rows.iter().map(|&i| mu.weights()[i].ln()).collect();
        Self {
            rows,
            n: mu.len(),
            log_mu,
        }
    }

    pub(crate) fn weights(&self) -> Vec<f64> {
        self.log_mu.iter().map(|l| l.exp()).collect()
    }

    /// `log K_ij = -(c_ij + column_terms_j) / eps` on active rows.
    pub(crate) fn kernel(&self, cost: &CostMatrix, column_terms: &[f64], epsilon: f64) -> Result<Coupling> {
        let m = cost.dim().1;
        let log = Array2::from_shape_fn((self.rows.len(), m), |(a, j)| {
            -(cost.values()[[self.rows[a], j]] + column_terms[j]) / epsilon
        });
        if let Some(((a, j), _)) = log.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Precondition(format!(
                "Gibbs kernel entry ({}, {j}) is not representable",
                self.rows[a]
            )));
        }
        Coupling::from_log(log)
    }

    /// Puts the active rows back among zero rows.
    pub(crate) fn embed(&self, reduced: &Coupling) -> Coupling {
        let m = reduced.dim().1;
        let mut full = Array2::from_elem((self.n, m), f64::NEG_INFINITY);
        for (a, &i) in self.rows.iter().enumerate() {
            full.row_mut(i).assign(&reduced.log_values().row(a));
        }
        Coupling::from_log_unchecked(full)
    }
}

pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub(crate) fn col_masses(gamma: &Coupling) -> Vec<f64> {
    gamma.log_col_sums().mapv(f64::exp).to_vec()
}

pub(crate) fn first_marginal_gap(gamma: &Coupling, mu: &ProbabilityVector) -> f64 {
    let rows = gamma.log_row_sums().mapv(f64::exp);
    l1(rows.as_slice().expect("contiguous"), mu.weights())
}

/// Tightens inner tolerances tenfold; false once they hit the floor.
pub(crate) fn tighten(cfg: &mut DykstraConfig) -> bool {
    if cfg.tol_nu <= MIN_INNER_TOL && cfg.tol_marginal <= MIN_INNER_TOL {
        return false;
    }
    cfg.tol_nu = (cfg.tol_nu / 10.0).max(MIN_INNER_TOL);
    cfg.tol_marginal = (cfg.tol_marginal / 10.0).max(MIN_INNER_TOL);
    true
}

/// Shifts trace times by the solve time elapsed before the run.
pub(crate) fn offset_trace(rows: Vec<TraceRow>, offset: f64) -> impl Iterator<Item = TraceRow> {
    rows.into_iter().map(move |mut r| {
        r.seconds += offset;
        r
    })
}

struct Partial {
    gamma: Coupling,
    converged: bool,
    outer_iterations: usize,
    cycles: usize,
    prox_evaluations: usize,
    prox_per_cycle: usize,
    nu_change: f64,
    inner_tol_nu: f64,
    warnings: Vec<String>,
    trace: Vec<TraceRow>,
    outer_trace: Vec<OuterRow>,
}

fn finish(problem: &ProblemSpec, scheme: Scheme, p: Partial, start: Instant) -> SolveReport {
    let nu = col_masses(&p.gamma);
    let mut warnings = p.warnings;
    let gibbs = match gibbs_residual(&p.gamma, problem) {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(format!("Gibbs residual unavailable: {e}"));
            None
        }
    };
    let expl = total_cost_at(problem, &p.gamma)
        .and_then(|psi| exploitability(&p.gamma, &psi, &problem.mu))
        .map_err(|e| warnings.push(format!("exploitability unavailable: {e}")))
        .ok();
    SolveReport {
        scheme,
        marginal_residual: first_marginal_gap(&p.gamma, &problem.mu),
        objective: coupling_objective(&p.gamma, problem),
        exploitability: expl,
        concentration: concentration_diagnostic(&p.gamma, &problem.mu),
        gibbs_residual: gibbs,
        norminter: problem.interaction.frobenius_sq(),
        norm_condition_satisfied: problem.interaction.satisfies_norm_condition(),
        strongly_convex_split: problem.congestion.admits_strongly_convex_split(),
        nu,
        gamma: p.gamma,
        converged: p.converged,
        outer_iterations: p.outer_iterations,
        dykstra_cycles: p.cycles,
        total_prox_evaluations: p.prox_evaluations,
        prox_per_cycle: p.prox_per_cycle,
        nu_change: p.nu_change,
        inner_tol_nu: p.inner_tol_nu,
        wall_seconds: start.elapsed().as_secs_f64(),
        warnings,
        trace: p.trace,
        outer_trace: p.outer_trace,
    }
}

fn note(warnings: &mut Vec<String>, msg: String) {
    warn!("{msg}");
    warnings.push(msg);
}

/// Dispatches on `cfg.scheme`.
pub fn solve(problem: &ProblemSpec, cfg: &SchemeConfig) -> Result<SolveReport> {
    match cfg.scheme {
        Scheme::Implicit => solve_implicit(problem, cfg),
        Scheme::SemiImplicit => solve_semi_implicit(problem, cfg),
    }
}

/// Prox list `[G2, G3, G1]` with `G2` the quadratic part
/// `1/2 |nu|^2 + 1/2 nu.phi.nu` and `G3` the remainder `F - t^2/2`.
pub fn solve_implicit(problem: &ProblemSpec, cfg: &SchemeConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut warnings = Vec::new();
    if matches!(problem.congestion.kind, CongestionKind::LogBarrier) && !problem.congestion.is_none() {
        return Err(Error::InvalidConfig(
            "log_barrier congestion is only supported by the semi_implicit scheme".into(),
        ));
    }
    if !problem.interaction.satisfies_norm_condition() {
        note(
            &mut warnings,
            format!(
                "interaction norm condition fails (sum phi^2 = {:.6e} >= 1); the implicit split may be nonconvex",
                problem.interaction.frobenius_sq()
            ),
        );
    }
    if !problem.congestion.admits_strongly_convex_split() {
        note(
            &mut warnings,
            "F(t) - t^2/2 is not convex on [0, 1]; the congestion remainder prox falls back to the smallest root".into(),
        );
    }

    let active = ActiveRows::new(&problem.mu);
    let kernel = active.kernel(&problem.cost, problem.potential.values(), problem.epsilon)?;
    let proxes: Vec<Box<dyn Prox>> = vec![
        Box::new(InteractionProx::new(0, problem.interaction.clone(), problem.epsilon, cfg.newton)),
        Box::new(CongestionProx::new(
            0,
            Arc::new(StronglyConvexRemainder(problem.congestion)),
            problem.epsilon,
            cfg.newton,
        )),
        Box::new(FirstMarginalProx::new(0, &active.weights())?),
    ];
    let list = ProxList::new(proxes)?;
    let prox_per_cycle = list.len();
    let mut solver = Dykstra::new(vec![kernel], list)?;

    let target = cfg.gibbs_target();
    let mut inner = cfg.dykstra;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut nu_change = f64::INFINITY;
    loop {
        let budget = cfg.dykstra.max_cycles.saturating_sub(solver.cycles());
        if budget == 0 {
            note(&mut warnings, format!("cycle budget of {} exhausted", cfg.dykstra.max_cycles));
            break;
        }
        let offset = start.elapsed().as_secs_f64();
        let run = solver.run(&DykstraConfig { max_cycles: budget, ..inner })?;
        trace.extend(offset_trace(run.trace, offset));
        nu_change = run.nu_change;
        if !run.converged {
            continue;
        }
        let gamma = active.embed(&solver.state()[0]);
        let residual = gibbs_residual(&gamma, problem)?;
        debug!("implicit: cycle {} gibbs residual {residual:e}", solver.cycles());
        if residual <= target {
            converged = true;
            break;
        }
        if !tighten(&mut inner) {
            note(
                &mut warnings,
                format!("Gibbs residual {residual:e} stays above {target:e} at the tightest inner tolerance"),
            );
            break;
        }
    }

    let partial = Partial {
        gamma: active.embed(&solver.state()[0]),
        converged,
        outer_iterations: 1,
        cycles: solver.cycles(),
        prox_evaluations: solver.prox_evaluations(),
        prox_per_cycle,
        nu_change,
        inner_tol_nu: inner.tol_nu,
        warnings,
        trace,
        outer_trace: Vec::new(),
    };
    Ok(finish(problem, Scheme::Implicit, partial, start))
}

/// Outer loop on `V = phi nu`; each inner problem runs `[congestion, G1]`
/// on the kernel `exp(-(c + v + V) / eps)`.
pub fn solve_semi_implicit(problem: &ProblemSpec, cfg: &SchemeConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut warnings = Vec::new();
    let m = problem.n_strategies();
    let eps = problem.epsilon;

    let mut nu = ProbabilityVector::uniform(m)?.weights().to_vec();
    let mut v_lin = problem.interaction.apply(&nu);
    let terms: Vec<f64> = problem
        .potential
        .values()
        .iter()
        .zip(&v_lin)
        .map(|(a, b)| a + b)
        .collect();
    let active = ActiveRows::new(&problem.mu);
    let kernel = active.kernel(&problem.cost, &terms, eps)?;
    let proxes: Vec<Box<dyn Prox>> = vec![
        Box::new(CongestionProx::new(0, Arc::new(problem.congestion), eps, cfg.newton)),
        Box::new(FirstMarginalProx::new(0, &active.weights())?),
    ];
    let list = ProxList::new(proxes)?;
    let prox_per_cycle = list.len();
    let mut solver = Dykstra::new(vec![kernel], list)?;

    let target = cfg.gibbs_target();
    let mut inner = DykstraConfig {
        tol_nu: cfg.dykstra.tol_nu.min(0.1 * cfg.outer_tol),
        ..cfg.dykstra
    };
    let interacting = !problem.interaction.is_zero();
    let mut trace = Vec::new();
    let mut outer_trace = Vec::new();
    let mut converged = false;
    let mut change = f64::INFINITY;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut iterations = 0;
    while iterations < cfg.max_outer {
        iterations += 1;
        let before = solver.cycles();
        let offset = start.elapsed().as_secs_f64();
        let run = solver.run(&inner)?;
        trace.extend(offset_trace(run.trace, offset));
        let next = col_masses(&solver.state()[0]);
        change = l1(&next, &nu);
        nu = next;
        outer_trace.push(OuterRow {
            iteration: iterations,
            nu_change: change,
            inner_cycles: solver.cycles() - before,
        });
        debug!("semi-implicit: outer {iterations} change {change:e}");
        if !run.converged {
            note(
                &mut warnings,
                format!("inner Dykstra hit {} cycles in outer iteration {iterations}", inner.max_cycles),
            );
        }

        if change <= cfg.outer_tol {
            let gamma = active.embed(&solver.state()[0]);
            let residual = gibbs_residual(&gamma, problem)?;
            if residual <= target {
                converged = true;
                break;
            }
            if run.converged && !tighten(&mut inner) {
                note(
                    &mut warnings,
                    format!("Gibbs residual {residual:e} stays above {target:e} at the tightest inner tolerance"),
                );
                break;
            }
        }

        if change < best {
            best = change;
            stale = 0;
        } else {
            stale += 1;
            if stale >= OSCILLATION_WINDOW {
                note(
                    &mut warnings,
                    format!(
                        "outer change has not improved on {best:e} for {OSCILLATION_WINDOW} iterations; stopping"
                    ),
                );
                break;
            }
        }

        if interacting {
            let updated = problem.interaction.apply(&nu);
            let shift: Vec<f64> = updated.iter().zip(&v_lin).map(|(a, b)| -(a - b) / eps).collect();
            solver.shift_kernel_columns(0, &shift)?;
            v_lin = updated;
        }
    }
    if !converged && iterations == cfg.max_outer {
        note(&mut warnings, format!("outer loop stopped at max_outer = {}", cfg.max_outer));
    }

    let partial = Partial {
        gamma: active.embed(&solver.state()[0]),
        converged,
        outer_iterations: iterations,
        cycles: solver.cycles(),
        prox_evaluations: solver.prox_evaluations(),
        prox_per_cycle,
        nu_change: change,
        inner_tol_nu: inner.tol_nu,
        warnings,
        trace,
        outer_trace,
    };
    Ok(finish(problem, Scheme::SemiImplicit, partial, start))
}
