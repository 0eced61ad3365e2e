//! Two populations on a shared strategy space, coupled through a congestion
//! cost on the total strategy mass `nu1 + nu2`.
//!
//! Each population carries its own interaction energy `nu.phi.nu` (no 1/2
//! factor), linearized at the current marginal as `V = 2 phi nu` and
//! absorbed into that population's Gibbs kernel.

use std::sync::Arc;
use std::time::Instant;

use log::{debug, warn};
use serde::Serialize;

use crate::diagnostics::{concentration_diagnostic, gibbs_residual_with, regularized_transport_cost, TotalCostMatrix};
use crate::dykstra::{Dykstra, DykstraConfig, ProxList, TraceRow};
use crate::error::{Error, Result};
use crate::kl::{log_sum_exp, Coupling};
use crate::model::{CongestionKind, ProbabilityVector, ProblemSpec, TwoPopulationSpec};
use crate::prox::{CongestionProx, FirstMarginalProx, Prox, SharedCongestionProx};
use crate::schemes::{
    col_masses, first_marginal_gap, l1, offset_trace, tighten, ActiveRows, OuterRow, SchemeConfig,
    OSCILLATION_WINDOW,
};

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport2 {
    pub nu1: Vec<f64>,
    pub nu2: Vec<f64>,
    #[serde(skip)]
    pub gamma1: Coupling,
    #[serde(skip)]
    pub gamma2: Coupling,
    pub converged: bool,
    pub outer_iterations: usize,
    pub dykstra_cycles: usize,
    pub total_prox_evaluations: usize,
    pub prox_per_cycle: usize,
    pub nu_change: f64,
    pub marginal_residual: [f64; 2],
    pub gibbs_residual: [Option<f64>; 2],
    pub concentration: [f64; 2],
    pub objective: f64,
    pub overlap: f64,
    pub inner_tol_nu: f64,
    pub wall_seconds: f64,
    pub warnings: Vec<String>,
    pub trace: Vec<TraceRow>,
    pub outer_trace: Vec<OuterRow>,
}

fn tag<T>(population: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Population {
        population,
        source: Box::new(e),
    })
}

/// `sum_j min(nu1_j, nu2_j)`.
pub fn overlap(nu1: &[f64], nu2: &[f64]) -> f64 {
    nu1.iter().zip(nu2).map(|(a, b)| a.min(*b)).sum()
}

/// `V = 2 phi nu` for one population.
fn linear_term(pop: &ProblemSpec, nu: &[f64]) -> Vec<f64> {
    pop.interaction.apply(nu).into_iter().map(|v| 2.0 * v).collect()
}

/// Per-strategy cost of population `pop` given both marginals.
/// Per-strategy cost terms from the log marginals `own` and `sigma`.
fn strategy_terms(spec: &TwoPopulationSpec, pop: &ProblemSpec, own: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    let nu: Vec<f64> = own.iter().map(|u| u.exp()).collect();
    let inter = linear_term(pop, &nu);
    own.iter()
        .zip(sigma)
        .zip(inter)
        .zip(pop.potential.values())
        .enumerate()
        .map(|(j, (((&t, &s), i), &v))| {
            let own_singular = t == f64::NEG_INFINITY && pop.congestion.singular_at_zero();
            let shared_singular = s == f64::NEG_INFINITY && spec.shared_congestion.singular_at_zero();
            if own_singular || shared_singular {
                return Err(Error::SingularEvaluation { strategy: j });
            }
            Ok(pop.congestion.derivative_at_log(t) + spec.shared_congestion.derivative_at_log(s) + i + v)
        })
        .collect()
}

/// `sum_l [MK_l(gamma_l) + sum F_l(nu_l) + nu_l.phi_l.nu_l + v_l.nu_l] + sum F(nu1 + nu2)`.
pub fn joint_objective(spec: &TwoPopulationSpec, gamma1: &Coupling, gamma2: &Coupling) -> f64 {
    let nu1 = col_masses(gamma1);
    let nu2 = col_masses(gamma2);
    let part = |pop: &ProblemSpec, g: &Coupling, nu: &[f64]| {
        let cong: f64 = nu.iter().map(|&t| pop.congestion.primitive(t)).sum();
        let pot: f64 = nu.iter().zip(pop.potential.values()).map(|(a, b)| a * b).sum();
        regularized_transport_cost(g, &pop.cost, pop.epsilon) + cong + pop.interaction.quadratic_form(nu) + pot
    };
    let shared: f64 = nu1
        .iter()
        .zip(&nu2)
        .map(|(a, b)| spec.shared_congestion.primitive(a + b))
        .sum();
    part(&spec.pop1, gamma1, &nu1) + part(&spec.pop2, gamma2, &nu2) + shared
}

/// Gibbs residuals of both populations at their joint marginals.
pub fn joint_gibbs_residuals(
    spec: &TwoPopulationSpec,
    gamma1: &Coupling,
    gamma2: &Coupling,
) -> [Result<f64>; 2] {
    let nu1 = gamma1.log_col_sums().to_vec();
    let nu2 = gamma2.log_col_sums().to_vec();
    let sigma: Vec<f64> = nu1
        .iter()
        .zip(&nu2)
        .map(|(a, b)| log_sum_exp([*a, *b]))
        .collect();
    let one = |k: usize, pop: &ProblemSpec, g: &Coupling, nu: &[f64]| {
        tag(
            k,
            strategy_terms(spec, pop, nu, &sigma)
                .and_then(|t| TotalCostMatrix::from_columns(&pop.cost, &t))
                .and_then(|psi| gibbs_residual_with(g, &pop.mu, &psi, pop.epsilon)),
        )
    };
    [
        one(1, &spec.pop1, gamma1, &nu1),
        one(2, &spec.pop2, gamma2, &nu2),
    ]
}

fn note(warnings: &mut Vec<String>, msg: String) {
    warn!("{msg}");
    warnings.push(msg);
}

/// Block Dykstra over `(gamma1, gamma2)` inside a semi-implicit outer loop
/// on the two interaction terms. `cfg.scheme` is ignored.
pub fn solve_two_populations(spec: &TwoPopulationSpec, cfg: &SchemeConfig) -> Result<SolveReport2> {
    cfg.validate()?;
    let start = Instant::now();
    let mut warnings = Vec::new();
    let pops = [&spec.pop1, &spec.pop2];
    let m = spec.pop1.n_strategies();

    let uniform = ProbabilityVector::uniform(m)?.weights().to_vec();
    let mut nus = [uniform.clone(), uniform];
    let mut lin = [linear_term(pops[0], &nus[0]), linear_term(pops[1], &nus[1])];
    let actives = [ActiveRows::new(&pops[0].mu), ActiveRows::new(&pops[1].mu)];
    let mut kernels = Vec::with_capacity(2);
    let mut proxes: Vec<Box<dyn Prox>> = Vec::new();
    for (b, pop) in pops.iter().enumerate() {
        if matches!(pop.congestion.kind, CongestionKind::LogBarrier) && !pop.congestion.is_none() {
            note(
                &mut warnings,
                format!("population {}: log_barrier congestion uses the smallest-root convention", b + 1),
            );
        }
        let terms: Vec<f64> = pop.potential.values().iter().zip(&lin[b]).map(|(a, c)| a + c).collect();
        kernels.push(tag(b + 1, actives[b].kernel(&pop.cost, &terms, pop.epsilon))?);
        if !pop.congestion.is_none() {
            proxes.push(Box::new(CongestionProx::new(b, Arc::new(pop.congestion), pop.epsilon, cfg.newton)));
        }
        proxes.push(Box::new(tag(b + 1, FirstMarginalProx::new(b, &actives[b].weights()))?));
    }
    proxes.push(Box::new(SharedCongestionProx::new(
        Arc::new(spec.shared_congestion),
        [pops[0].epsilon, pops[1].epsilon],
        cfg.newton,
    )));
    let list = ProxList::new(proxes)?;
    let prox_per_cycle = list.len();
    let mut solver = Dykstra::new(kernels, list)?;

    let target = cfg.gibbs_target();
    let mut inner = DykstraConfig {
        tol_nu: cfg.dykstra.tol_nu.min(0.1 * cfg.outer_tol),
        ..cfg.dykstra
    };
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
        let next = [col_masses(&solver.state()[0]), col_masses(&solver.state()[1])];
        change = l1(&next[0], &nus[0]) + l1(&next[1], &nus[1]);
        nus = next;
        outer_trace.push(OuterRow {
            iteration: iterations,
            nu_change: change,
            inner_cycles: solver.cycles() - before,
        });
        debug!("two populations: outer {iterations} change {change:e}");
        if !run.converged {
            note(
                &mut warnings,
                format!("inner Dykstra hit {} cycles in outer iteration {iterations}", inner.max_cycles),
            );
        }

        if change <= cfg.outer_tol {
            let g1 = actives[0].embed(&solver.state()[0]);
            let g2 = actives[1].embed(&solver.state()[1]);
            let [r1, r2] = joint_gibbs_residuals(spec, &g1, &g2);
            let worst = r1?.max(r2?);
            if worst <= target {
                converged = true;
                break;
            }
            if run.converged && !tighten(&mut inner) {
                note(
                    &mut warnings,
                    format!("Gibbs residual {worst:e} stays above {target:e} at the tightest inner tolerance"),
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
                    format!("outer change has not improved on {best:e} for {OSCILLATION_WINDOW} iterations; stopping"),
                );
                break;
            }
        }

        for (b, pop) in pops.iter().enumerate() {
            if pop.interaction.is_zero() {
                continue;
            }
            let updated = linear_term(pop, &nus[b]);
            let shift: Vec<f64> = updated
                .iter()
                .zip(&lin[b])
                .map(|(a, c)| -(a - c) / pop.epsilon)
                .collect();
            solver.shift_kernel_columns(b, &shift)?;
            lin[b] = updated;
        }
    }
    if !converged && iterations == cfg.max_outer {
        note(&mut warnings, format!("outer loop stopped at max_outer = {}", cfg.max_outer));
    }

    let gamma1 = actives[0].embed(&solver.state()[0]);
    let gamma2 = actives[1].embed(&solver.state()[1]);
    let gibbs = joint_gibbs_residuals(spec, &gamma1, &gamma2).map(|r| {
        r.map_err(|e| warnings.push(format!("Gibbs residual unavailable: {e}"))).ok()
    });
    let nu1 = col_masses(&gamma1);
    let nu2 = col_masses(&gamma2);
    Ok(SolveReport2 {
        overlap: overlap(&nu1, &nu2),
        objective: joint_objective(spec, &gamma1, &gamma2),
        marginal_residual: [
            first_marginal_gap(&gamma1, &spec.pop1.mu),
            first_marginal_gap(&gamma2, &spec.pop2.mu),
        ],
        concentration: [
            concentration_diagnostic(&gamma1, &spec.pop1.mu),
            concentration_diagnostic(&gamma2, &spec.pop2.mu),
        ],
        gibbs_residual: gibbs,
        nu1,
        nu2,
        gamma1,
        gamma2,
        converged,
        outer_iterations: iterations,
        dykstra_cycles: solver.cycles(),
        total_prox_evaluations: solver.prox_evaluations(),
        prox_per_cycle,
        nu_change: change,
        inner_tol_nu: inner.tol_nu,
        wall_seconds: start.elapsed().as_secs_f64(),
        warnings,
        trace,
        outer_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;
    use crate::schemes::{solve_semi_implicit, Scheme};
    use ndarray::{array, Array2};

    fn pop(cost: Array2<f64>, mu: Vec<f64>, cong: CongestionSpec, phi: Array2<f64>, v: Vec<f64>, eps: f64) -> ProblemSpec {
        let (n, m) = cost.dim();
        let x = DiscreteSpace::from_1d(&(0..n).map(|k| k as f64).collect::<Vec<_>>()).unwrap();
        let y = DiscreteSpace::from_1d(&(0..m).map(|k| k as f64).collect::<Vec<_>>()).unwrap();
        ProblemSpec::new(
            x,
            y,
            ProbabilityVector::new(mu).unwrap(),
            CostMatrix::new(cost).unwrap(),
            cong,
            InteractionMatrix::new(phi).unwrap(),
            PotentialVector::new(v).unwrap(),
            eps,
        )
        .unwrap()
    }

    fn cfg() -> SchemeConfig {
        SchemeConfig {
            scheme: Scheme::SemiImplicit,
            ..SchemeConfig::default()
        }
    }

    fn phi() -> Array2<f64> {
        array![[0.0, 0.1, 0.4], [0.1, 0.0, 0.1], [0.4, 0.1, 0.0]]
    }

    #[test]
    fn without_shared_congestion_populations_decouple() {
        let a = pop(
            array![[0.0, 1.0, 4.0], [1.0, 0.0, 1.0]],
            vec![0.3, 0.7],
            CongestionSpec::power(2.0).unwrap(),
            phi(),
            vec![0.0, 0.2, 0.1],
            0.5,
        );
        let b = pop(
            array![[4.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 2.0, 1.0]],
            vec![0.2, 0.3, 0.5],
            CongestionSpec::none(),
            phi() * 0.5,
            vec![0.1, 0.0, 0.0],
            0.8,
        );
        let spec = TwoPopulationSpec::new(a.clone(), b.clone(), CongestionSpec::none()).unwrap();
        let joint = solve_two_populations(&spec, &cfg()).unwrap();
        assert!(joint.converged, "{:?}", joint.warnings);
        for (p, nu) in [(a, &joint.nu1), (b, &joint.nu2)] {
            let mut doubled = p.clone();
            doubled.interaction = InteractionMatrix::new(p.interaction.values() * 2.0).unwrap();
            let alone = solve_semi_implicit(&doubled, &cfg()).unwrap();
            assert!(l1(&alone.nu, nu) < 1e-8);
        }
    }

    #[test]
    fn symmetric_spec_gives_equal_marginals_and_swaps_exactly() {
        let a = pop(
            array![[0.0, 1.0, 4.0], [1.0, 0.0, 1.0]],
            vec![0.4, 0.6],
            CongestionSpec::power(2.0).unwrap(),
            phi(),
            vec![0.0, 0.2, 0.1],
            0.5,
        );
        let shared = CongestionSpec::power(3.0).unwrap();
        let spec = TwoPopulationSpec::new(a.clone(), a.clone(), shared).unwrap();
        let r = solve_two_populations(&spec, &cfg()).unwrap();
        assert!(r.converged);
        assert!(l1(&r.nu1, &r.nu2) <= 1e-10);
        let total: f64 = r.nu1.iter().chain(&r.nu2).sum();
        assert!((total - 2.0).abs() <= 1e-10);

        let mut other = a.clone();
        other.mu = ProbabilityVector::new(vec![0.9, 0.1]).unwrap();
        other.epsilon = 0.7;
        let spec = TwoPopulationSpec::new(a, other, shared).unwrap();
        let fwd = solve_two_populations(&spec, &cfg()).unwrap();
        let back = solve_two_populations(&spec.swapped(), &cfg()).unwrap();
        assert_eq!(fwd.nu1, back.nu2);
        assert_eq!(fwd.nu2, back.nu1);
        for r in [&fwd, &back] {
            assert!(r.converged);
            assert!(r.marginal_residual.iter().all(|v| *v <= 1e-12));
            assert!(r.gibbs_residual.iter().all(|g| g.unwrap() <= 1e-7));
        }
    }

    #[test]
    fn overlap_of_disjoint_and_equal_marginals() {
        assert_eq!(overlap(&[0.5, 0.5, 0.0], &[0.0, 0.0, 1.0]), 0.0);
        assert_eq!(overlap(&[0.25, 0.75], &[0.25, 0.75]), 1.0);
    }
}
