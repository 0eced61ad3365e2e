//! Equilibrium checks, objective evaluation and brute-force oracles.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kl::{log_sum_exp, Coupling};
use crate::model::{CostMatrix, ProbabilityVector, ProblemSpec};

/// Tolerance on `Lambda_1(gamma) = mu` required by [`exploitability`].
pub const FEASIBILITY_TOLERANCE: f64 = 1e-8;
pub const SINKHORN_MAX_ITERATIONS: usize = 200_000;
/// Row-marginal tolerance used when Sinkhorn evaluates an objective.
pub const OBJECTIVE_SINKHORN_TOL: f64 = 1e-13;
pub const DEFAULT_ORACLE_RESOLUTION: usize = 400;
pub const DEFAULT_ORACLE_REFINEMENTS: usize = 1;
const REFINE_FACTOR: usize = 10;
const REFINE_WINDOW: i64 = 3;

/// `Psi_ij[nu] = c_ij + f(nu_j) + (phi nu)_j + v_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalCostMatrix {
    values: Array2<f64>,
}

impl TotalCostMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Precondition(format!("total cost ({i}, {j}) is {v}")));
        }
        Ok(Self { values })
    }

    /// Adds a per-strategy term to every row.
    pub fn from_columns(cost: &CostMatrix, column_terms: &[f64]) -> Result<Self> {
        let col = ndarray::ArrayView1::from(column_terms);
        Self::new(cost.values() + &col.insert_axis(Axis(0)))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Per-strategy part `f(nu_j) + (phi nu)_j + v_j` of the total cost.
pub fn strategy_cost(problem: &ProblemSpec, nu: &[f64]) -> Result<Vec<f64>> {
    if nu.len() != problem.n_strategies() {
        return Err(Error::DimensionMismatch(format!(
            "nu has {} entries for {} strategies",
            nu.len(),
            problem.n_strategies()
        )));
    }
    let interaction = problem.interaction.apply(nu);
    nu.iter()
        .zip(interaction)
        .zip(problem.potential.values())
        .enumerate()
        .map(|(j, ((&t, inter), &v))| {
            if t <= 0.0 && problem.congestion.singular_at_zero() {
                return Err(Error::SingularEvaluation { strategy: j });
            }
            Ok(problem.congestion.derivative(t) + inter + v)
        })
        .collect()
}

pub fn total_cost(problem: &ProblemSpec, nu: &[f64]) -> Result<TotalCostMatrix> {
    TotalCostMatrix::from_columns(&problem.cost, &strategy_cost(problem, nu)?)
}

/// [`strategy_cost`] from `ln nu`, so congestion terms singular at zero stay
/// finite for column masses that underflow.
pub fn strategy_cost_from_log(problem: &ProblemSpec, log_nu: &[f64]) -> Result<Vec<f64>> {
    if log_nu.len() != problem.n_strategies() {
        return Err(Error::DimensionMismatch(format!(
            "nu has {} entries for {} strategies",
            log_nu.len(),
            problem.n_strategies()
        )));
    }
    let nu: Vec<f64> = log_nu.iter().map(|u| u.exp()).collect();
    let interaction = problem.interaction.apply(&nu);
    log_nu
        .iter()
        .zip(interaction)
        .zip(problem.potential.values())
        .enumerate()
        .map(|(j, ((&u, inter), &v))| {
            if u == f64::NEG_INFINITY && problem.congestion.singular_at_zero() {
                return Err(Error::SingularEvaluation { strategy: j });
            }
            Ok(problem.congestion.derivative_at_log(u) + inter + v)
        })
        .collect()
}

/// Total cost at the strategy marginal of `gamma`.
pub fn total_cost_at(problem: &ProblemSpec, gamma: &Coupling) -> Result<TotalCostMatrix> {
    let log_nu = gamma.log_col_sums().to_vec();
    TotalCostMatrix::from_columns(&problem.cost, &strategy_cost_from_log(problem, &log_nu)?)
}

/// `sum_i [sum_j gamma_ij Psi_ij - mu_i min_j Psi_ij]`, skipping rows with
/// `mu_i = 0`.
pub fn exploitability(gamma: &Coupling, psi: &TotalCostMatrix, mu: &ProbabilityVector) -> Result<f64> {
    let (rows, cols) = gamma.dim();
    if psi.values().dim() != (rows, cols) || mu.len() != rows {
        return Err(Error::DimensionMismatch(format!(
            "coupling {:?}, total cost {:?}, mu {}",
            gamma.dim(),
            psi.values().dim(),
            mu.len()
        )));
    }
    let row_mass = gamma.log_row_sums().mapv(f64::exp);
    let gap: f64 = row_mass.iter().zip(mu.weights()).map(|(a, b)| (a - b).abs()).sum();
    if gap > FEASIBILITY_TOLERANCE {
        return Err(Error::Precondition(format!(
            "coupling violates the first marginal by {gap:e} in l1"
        )));
    }
    let mut total = 0.0;
    for ((g, p), &m) in gamma
        .log_values()
        .outer_iter()
        .zip(psi.values().outer_iter())
        .zip(mu.weights())
    {
        if m == 0.0 {
            continue;
        }
        let best = p.iter().cloned().fold(f64::INFINITY, f64::min);
        // Measured against the row minimum so the sum is a sum of nonnegatives.
        let row: f64 = g
            .iter()
            .zip(p.iter())
            .map(|(&lg, &pv)| lg.exp() * (pv - best))
            .sum();
        total += row;
    }
    Ok(total.max(0.0))
}

/// Max over rows of `|| gamma_i / mu_i - softmax(-Psi_i / eps) ||_1`.
pub fn gibbs_residual_with(
    gamma: &Coupling,
    mu: &ProbabilityVector,
    psi: &TotalCostMatrix,
    epsilon: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, ((g, p), &m)) in gamma
        .log_values()
        .outer_iter()
        .zip(psi.values().outer_iter())
        .zip(mu.weights())
        .enumerate()
    {
        if m == 0.0 {
            continue;
        }
        if let Some(j) = g.iter().position(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::ResidualUndefined { row: i, col: j });
        }
        let logits: Vec<f64> = p.iter().map(|v| -v / epsilon).collect();
        let norm = log_sum_exp(logits.iter().copied());
        let lm = m.ln();
        let dist: f64 = g
            .iter()
            .zip(&logits)
            .map(|(&lg, &l)| ((lg - lm).exp() - (l - norm).exp()).abs())
            .sum();
        worst = worst.max(dist);
    }
    Ok(worst)
}

/// Gibbs residual of `gamma` at its own strategy distribution.
pub fn gibbs_residual(gamma: &Coupling, problem: &ProblemSpec) -> Result<f64> {
    let psi = total_cost_at(problem, gamma)?;
    gibbs_residual_with(gamma, &problem.mu, &psi, problem.epsilon)
}

/// `sum_i mu_i H(gamma_i / mu_i)` with `H` the Shannon entropy.
pub fn concentration_diagnostic(gamma: &Coupling, mu: &ProbabilityVector) -> f64 {
    gamma
        .log_values()
        .outer_iter()
        .zip(mu.weights())
        .filter(|(_, &m)| m > 0.0)
        .map(|(g, &m)| {
            let lm = m.ln();
            let h: f64 = g
                .iter()
                .filter(|v| v.is_finite())
                .map(|&lg| {
                    let lp = lg - lm;
                    -lp.exp() * lp
                })
                .sum();
            m * h.max(0.0)
        })
        .sum()
}

/// `c . gamma + eps sum gamma (ln gamma - 1)` with `0 ln 0 = 0`.
pub fn regularized_transport_cost(gamma: &Coupling, cost: &CostMatrix, epsilon: f64) -> f64 {
    gamma
        .log_values()
        .iter()
        .zip(cost.values().iter())
        .filter(|(lg, _)| lg.is_finite())
        .map(|(&lg, &c)| lg.exp() * (c + epsilon * (lg - 1.0)))
        .sum()
}

/// Objective `MK_eps + E` evaluated at a coupling and its own second marginal.
/// Upper bound on [`objective_value`] of that marginal, equal at the optimum.
pub fn coupling_objective(gamma: &Coupling, problem: &ProblemSpec) -> f64 {
    let nu = gamma.log_col_sums().mapv(f64::exp);
    regularized_transport_cost(gamma, &problem.cost, problem.epsilon)
        + problem.energy(nu.as_slice().expect("contiguous"))
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub coupling: Coupling,
    pub value: f64,
    /// Log row scalings; `-inf` for dropped zero-mass rows.
    pub log_u: Array1<f64>,
    /// Log column scalings; `-inf` for dropped zero-mass columns.
    pub log_v: Array1<f64>,
    pub iterations: usize,
}

/// Entropic transport between `mu` and `nu` in log domain.
pub fn sinkhorn(
    cost: &CostMatrix,
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    epsilon: f64,
    tol: f64,
) -> Result<SinkhornResult> {
    sinkhorn_capped(cost, mu, nu, epsilon, tol, SINKHORN_MAX_ITERATIONS)
}

pub fn sinkhorn_capped(
    cost: &CostMatrix,
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    epsilon: f64,
    tol: f64,
    max_iterations: usize,
) -> Result<SinkhornResult> {
    let (n, m) = cost.dim();
    if mu.len() != n || nu.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "cost is {n}x{m}, marginals have {} and {} entries",
            mu.len(),
            nu.len()
        )));
    }
    if !(epsilon > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidConfig("epsilon and tol must be > 0".into()));
    }
    let rows: Vec<usize> = (0..n).filter(|&i| mu.weights()[i] > 0.0).collect();
    let cols: Vec<usize> = (0..m).filter(|&j| nu.weights()[j] > 0.0).collect();
    let log_mu: Vec<f64> = rows.iter().map(|&i| mu.weights()[i].ln()).collect();
    let log_nu: Vec<f64> = cols.iter().map(|&j| nu.weights()[j].ln()).collect();
    let log_k = Array2::from_shape_fn((rows.len(), cols.len()), |(a, b)| {
        -cost.values()[[rows[a], cols[b]]] / epsilon
    });

    let mut u = vec![0.0; rows.len()];
    let mut v = vec![0.0; cols.len()];
    let mut row_lse = vec![0.0; rows.len()];
    let mut iterations = 0;
    let mut row_residual;
    loop {
        for (a, r) in row_lse.iter_mut().enumerate() {
            *r = log_sum_exp(log_k.row(a).iter().zip(&v).map(|(k, vb)| k + vb));
        }
        if iterations > 0 {
            row_residual = row_lse
                .iter()
                .zip(&u)
                .zip(&log_mu)
                .map(|((r, ua), lm)| ((r + ua).exp() - lm.exp()).abs())
                .sum();
            if row_residual <= tol || iterations == max_iterations {
                break;
            }
        }
        iterations += 1;
        for ((ua, r), lm) in u.iter_mut().zip(&row_lse).zip(&log_mu) {
            *ua = lm - r;
        }
        for (b, vb) in v.iter_mut().enumerate() {
            let col = log_k.column(b);
            *vb = log_nu[b] - log_sum_exp(col.iter().zip(&u).map(|(k, ua)| k + ua));
        }
    }
    if row_residual > tol {
        return Err(Error::SinkhornNonConvergence {
            iterations,
            row_residual,
            col_residual: 0.0,
        });
    }

    let mut log_gamma = Array2::from_elem((n, m), f64::NEG_INFINITY);
    let mut log_u = Array1::from_elem(n, f64::NEG_INFINITY);
    let mut log_v = Array1::from_elem(m, f64::NEG_INFINITY);
    for (a, &i) in rows.iter().enumerate() {
        log_u[i] = u[a];
        for (b, &j) in cols.iter().enumerate() {
            log_gamma[[i, j]] = log_k[[a, b]] + u[a] + v[b];
        }
    }
    for (b, &j) in cols.iter().enumerate() {
        log_v[j] = v[b];
    }
    let coupling = Coupling::from_log(log_gamma)?;
    let value = regularized_transport_cost(&coupling, cost, epsilon);
    Ok(SinkhornResult {
        coupling,
        value,
        log_u,
        log_v,
        iterations,
    })
}

/// `MK_eps(nu) + E(nu)` with the transport part computed by Sinkhorn.
pub fn objective_value(nu: &ProbabilityVector, problem: &ProblemSpec) -> Result<f64> {
    if nu.len() != problem.n_strategies() {
        return Err(Error::DimensionMismatch(format!(
            "nu has {} entries for {} strategies",
            nu.len(),
            problem.n_strategies()
        )));
    }
    let transport = sinkhorn(&problem.cost, &problem.mu, nu, problem.epsilon, OBJECTIVE_SINKHORN_TOL)?;
    Ok(transport.value + problem.energy(nu.weights()))
}

/// Grid search over the simplex on `Y` (at most 3 strategies) with one
/// local refinement pass.
pub fn brute_force_minimize(problem: &ProblemSpec, resolution: usize) -> Result<ProbabilityVector> {
    brute_force_minimize_refined(problem, resolution, DEFAULT_ORACLE_REFINEMENTS)
}

/// As [`brute_force_minimize`] with `refinements` passes, each shrinking
/// the step tenfold on a window of +-3 previous steps around the incumbent.
pub fn brute_force_minimize_refined(
    problem: &ProblemSpec,
    resolution: usize,
    refinements: usize,
) -> Result<ProbabilityVector> {
    let m = problem.n_strategies();
    if m > 3 {
        return Err(Error::OracleScope(format!(
            "brute force handles at most 3 strategies, got {m}"
        )));
    }
    if resolution < 100 {
        return Err(Error::Precondition(format!(
            "oracle resolution must be at least 100, got {resolution}"
        )));
    }
    if m == 1 {
        return ProbabilityVector::new(vec![1.0]);
    }

    let step = 1.0 / resolution as f64;
    let r = resolution as i64;
    let coarse: Vec<Vec<f64>> = if m == 2 {
        (0..=r).map(|a| vec![a as f64 * step, (r - a) as f64 * step]).collect()
    } else {
        (0..=r)
            .flat_map(|a| (0..=r - a).map(move |b| (a, b)))
            .map(|(a, b)| vec![a as f64 * step, b as f64 * step, (r - a - b) as f64 * step])
            .collect()
    };
    let mut best = best_point(problem, coarse)?;

    let mut h = step;
    for _ in 0..refinements {
        let fine = h / REFINE_FACTOR as f64;
        let reach = REFINE_WINDOW * REFINE_FACTOR as i64;
        let centre = best.clone();
        let mut candidates = Vec::new();
        if m == 2 {
            for k in -reach..=reach {
                let a = centre[0] + k as f64 * fine;
                if (0.0..=1.0).contains(&a) {
                    candidates.push(vec![a, 1.0 - a]);
                }
            }
        } else {
            for k in -reach..=reach {
                for l in -reach..=reach {
                    let a = centre[0] + k as f64 * fine;
                    let b = centre[1] + l as f64 * fine;
                    let c = 1.0 - a - b;
                    if a >= 0.0 && b >= 0.0 && c >= -1e-15 {
                        candidates.push(vec![a, b, c.max(0.0)]);
                    }
                }
            }
        }
        best = best_point(problem, candidates)?;
        h = fine;
    }
    ProbabilityVector::normalized(best)
}

/// Lowest objective; ties go to the lexicographically smallest point.
fn best_point(problem: &ProblemSpec, candidates: Vec<Vec<f64>>) -> Result<Vec<f64>> {
    let values: Vec<Result<f64>> = candidates
        .par_iter()
        .map(|nu| objective_value(&ProbabilityVector::normalized(nu.clone())?, problem))
        .collect();
    let mut best: Option<(f64, usize)> = None;
    for (k, v) in values.into_iter().enumerate() {
        let v = v?;
        let better = match best {
            None => true,
            Some((bv, bk)) => {
                v < bv || (v == bv && candidates[k].partial_cmp(&candidates[bk]) == Some(std::cmp::Ordering::Less))
            }
        };
        if better {
            best = Some((v, k));
        }
    }
    let (_, k) = best.ok_or_else(|| Error::OracleScope("empty candidate set".into()))?;
    Ok(candidates[k].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn problem(cost: Array2<f64>, mu: Vec<f64>, congestion: CongestionSpec, phi: Array2<f64>, v: Vec<f64>, eps: f64) -> ProblemSpec {
        let (n, m) = cost.dim();
        let x = DiscreteSpace::from_1d(&(0..n).map(|k| k as f64).collect::<Vec<_>>()).unwrap();
        let y = DiscreteSpace::from_1d(&(0..m).map(|k| k as f64).collect::<Vec<_>>()).unwrap();
        ProblemSpec::new(
            x,
            y,
            ProbabilityVector::new(mu).unwrap(),
            CostMatrix::new(cost).unwrap(),
            congestion,
            InteractionMatrix::new(phi).unwrap(),
            PotentialVector::new(v).unwrap(),
            eps,
        )
        .unwrap()
    }

    fn plain(cost: Array2<f64>, mu: Vec<f64>, eps: f64) -> ProblemSpec {
        let m = cost.ncols();
        problem(cost, mu, CongestionSpec::none(), Array2::zeros((m, m)), vec![0.0; m], eps)
    }

    #[test]
    fn total_cost_without_extras_is_the_cost() {
        let c = array![[0.0, 1.0, 2.0], [3.0, 0.5, 1.5]];
        let p = plain(c.clone(), vec![0.5, 0.5], 1.0);
        let psi = total_cost(&p, &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(psi.values(), &c);
    }

    #[test]
    fn constant_interaction_shift_keeps_row_argmins() {
        let c = array![[0.0, 1.0, 2.0], [3.0, 0.5, 1.5]];
        let phi = array![[0.0, 0.3, 0.3], [0.3, 0.0, 0.3], [0.3, 0.3, 0.0]];
        let p = problem(c.clone(), vec![0.5, 0.5], CongestionSpec::none(), phi, vec![0.0; 3], 1.0);
        let nu = [1.0 / 3.0; 3];
        let psi = total_cost(&p, &nu).unwrap();
        let shift = &c - psi.values();
        for v in shift.iter() {
            assert!((v - shift[[0, 0]]).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_congestion_names_the_strategy() {
        let c = array![[0.0, 1.0]];
        let cong = CongestionSpec::new(CongestionKind::Entropy, 1.0, 1.0).unwrap();
        let p = problem(c, vec![1.0], cong, Array2::zeros((2, 2)), vec![0.0; 2], 1.0);
        assert!(matches!(total_cost(&p, &[1.0, 0.0]), Err(Error::SingularEvaluation { strategy: 1 })));
    }

    #[test]
    fn exploitability_examples() {
        let psi = TotalCostMatrix::new(array![[0.0, 1.0]]).unwrap();
        let mu = ProbabilityVector::new(vec![1.0]).unwrap();
        let half = Coupling::from_linear(&array![[0.5, 0.5]]).unwrap();
        assert!((exploitability(&half, &psi, &mu).unwrap() - 0.5).abs() < 1e-15);
        let pure = Coupling::from_linear(&array![[1.0, 0.0]]).unwrap();
        assert_eq!(exploitability(&pure, &psi, &mu).unwrap(), 0.0);
        let infeasible = Coupling::from_linear(&array![[0.4, 0.5]]).unwrap();
        assert!(matches!(exploitability(&infeasible, &psi, &mu), Err(Error::Precondition(_))));
    }

    #[test]
    fn gibbs_residual_is_zero_at_a_fixed_point_of_gibbs_form() {
        // With phi = 0 and no congestion the Gibbs form does not depend on nu.
        let c = array![[0.0, 1.0, 4.0], [1.0, 0.0, 1.0]];
        let mu = vec![0.25, 0.75];
        let p = plain(c.clone(), mu.clone(), 0.7);
        let log = Array2::from_shape_fn((2, 3), |(i, j)| {
            let norm = log_sum_exp(c.row(i).iter().map(|v| -v / 0.7));
            mu[i].ln() - c[[i, j]] / 0.7 - norm
        });
        let g = Coupling::from_log(log).unwrap();
        assert!(gibbs_residual(&g, &p).unwrap() < 1e-15);

        let product = Coupling::from_linear(&array![[0.25 / 3.0; 3], [0.75 / 3.0; 3]]).unwrap();
        assert!(gibbs_residual(&product, &p).unwrap() > 0.1);

        let zero = Coupling::from_linear(&array![[0.25, 0.0, 0.0], [0.25, 0.25, 0.25]]).unwrap();
        assert!(matches!(gibbs_residual(&zero, &p), Err(Error::ResidualUndefined { row: 0, col: 1 })));
    }

    #[test]
    fn concentration_examples() {
        let mu = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        let pure = Coupling::from_linear(&array![[0.5, 0.0, 0.0], [0.0, 0.0, 0.5]]).unwrap();
        assert_eq!(concentration_diagnostic(&pure, &mu), 0.0);
        let spread = Coupling::from_linear(&array![[0.5 / 3.0; 3], [0.5 / 3.0; 3]]).unwrap();
        assert!((concentration_diagnostic(&spread, &mu) - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn sinkhorn_zero_cost_gives_product() {
        let cost = CostMatrix::new(Array2::zeros((2, 3))).unwrap();
        let mu = ProbabilityVector::new(vec![0.3, 0.7]).unwrap();
        let nu = ProbabilityVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        for eps in [0.01, 1.0, 100.0] {
            let r = sinkhorn(&cost, &mu, &nu, eps, 1e-14).unwrap();
            let g = r.coupling.to_linear();
            for i in 0..2 {
                for j in 0..3 {
                    assert!((g[[i, j]] - mu.weights()[i] * nu.weights()[j]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn sinkhorn_single_point_value() {
        let cost = CostMatrix::new(array![[2.5]]).unwrap();
        let one = ProbabilityVector::new(vec![1.0]).unwrap();
        let r = sinkhorn(&cost, &one, &one, 0.3, 1e-14).unwrap();
        assert!((r.value - (2.5 - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn sinkhorn_two_by_two_matches_one_parameter_search() {
        let cost = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let half = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        let r = sinkhorn(&cost, &half, &half, 1.0, 1e-14).unwrap();
        // Couplings are [[t, 1/2 - t], [1/2 - t, t]].
        let objective = |t: f64| {
            let s = 0.5 - t;
            2.0 * s + 2.0 * (t * (t.ln() - 1.0) + s * (s.ln() - 1.0))
        };
        let steps = 1_000_000;
        let best = (1..steps)
            .map(|k| objective(0.5 * k as f64 / steps as f64))
            .fold(f64::INFINITY, f64::min);
        assert!((r.value - best).abs() < 1e-10);
        assert!(r.value <= best + 1e-14);
    }

    #[test]
    fn sinkhorn_drops_zero_mass_points() {
        let cost = CostMatrix::new(array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0]]).unwrap();
        let mu = ProbabilityVector::new(vec![0.0, 1.0]).unwrap();
        let nu = ProbabilityVector::new(vec![0.4, 0.0, 0.6]).unwrap();
        let r = sinkhorn(&cost, &mu, &nu, 0.5, 1e-14).unwrap();
        let g = r.coupling.to_linear();
        assert_eq!(g.row(0).sum(), 0.0);
        assert!((g[[1, 0]] - 0.4).abs() < 1e-14 && g[[1, 1]] == 0.0);
        assert!(r.log_u[0] == f64::NEG_INFINITY && r.log_v[1] == f64::NEG_INFINITY);
    }

    #[test]
    fn sinkhorn_cap_reports_residuals() {
        let cost = CostMatrix::new(array![[0.0, 5.0], [5.0, 0.0]]).unwrap();
        let mu = ProbabilityVector::new(vec![0.1, 0.9]).unwrap();
        let nu = ProbabilityVector::new(vec![0.9, 0.1]).unwrap();
        let err = sinkhorn_capped(&cost, &mu, &nu, 0.05, 1e-15, 2).unwrap_err();
        assert!(matches!(err, Error::SinkhornNonConvergence { iterations: 2, .. }));
    }

    #[test]
    fn objective_without_energy_is_sinkhorn_value() {
        let c = array![[0.0, 1.0], [2.0, 0.5]];
        let p = plain(c, vec![0.4, 0.6], 0.5);
        let nu = ProbabilityVector::new(vec![0.3, 0.7]).unwrap();
        let s = sinkhorn(&p.cost, &p.mu, &nu, 0.5, OBJECTIVE_SINKHORN_TOL).unwrap();
        assert_eq!(objective_value(&nu, &p).unwrap(), s.value);
    }

    #[test]
    fn brute_force_trivial_cases() {
        let p = plain(array![[1.0], [2.0]], vec![0.5, 0.5], 0.5);
        assert_eq!(brute_force_minimize(&p, 100).unwrap().weights(), &[1.0]);

        let sym = plain(array![[0.0, 1.0], [1.0, 0.0]], vec![0.5, 0.5], 0.5);
        let nu = brute_force_minimize(&sym, 100).unwrap();
        assert!((nu.weights()[0] - 0.5).abs() < 1e-3);

        let big = plain(Array2::zeros((1, 4)), vec![1.0], 0.5);
        assert!(matches!(brute_force_minimize(&big, 100), Err(Error::OracleScope(_))));
        assert!(matches!(brute_force_minimize(&sym, 50), Err(Error::Precondition(_))));
    }

    #[test]
    fn refinement_agrees_with_coarse_search() {
        let c = array![[0.0, 1.0, 4.0], [1.0, 0.0, 1.0], [4.0, 1.0, 0.0]];
        let phi = array![[0.2, 0.1, 0.0], [0.1, 0.2, 0.1], [0.0, 0.1, 0.2]];
        let p = problem(
            c,
            vec![0.5, 0.3, 0.2],
            CongestionSpec::power(2.0).unwrap(),
            phi,
            vec![0.0, 0.1, 0.3],
            0.5,
        );
        let coarse = brute_force_minimize_refined(&p, 100, 0).unwrap();
        let fine = brute_force_minimize_refined(&p, 100, 2).unwrap();
        let gap: f64 = coarse.weights().iter().zip(fine.weights()).map(|(a, b)| (a - b).abs()).sum();
        assert!(gap <= 2.0 * 2.0 / 100.0);
        let fo = objective_value(&fine, &p).unwrap();
        let co = objective_value(&coarse, &p).unwrap();
        assert!(fo <= co);
    }

    fn small_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
        (2usize..5, 2usize..5).prop_flat_map(|(n, m)| {
            (
                proptest::collection::vec(0.0f64..3.0, n * m),
                proptest::collection::vec(0.05f64..1.0, n),
                proptest::collection::vec(0.05f64..1.0, m),
                0.1f64..2.0,
            )
        })
    }

    fn build(c: &[f64], a: &[f64], b: &[f64]) -> (CostMatrix, ProbabilityVector, ProbabilityVector) {
        let cost = CostMatrix::new(Array2::from_shape_vec((a.len(), b.len()), c.to_vec()).unwrap()).unwrap();
        (
            cost,
            ProbabilityVector::normalized(a.to_vec()).unwrap(),
            ProbabilityVector::normalized(b.to_vec()).unwrap(),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn sinkhorn_matches_both_marginals((c, a, b, eps) in small_instance()) {
            let (cost, mu, nu) = build(&c, &a, &b);
            let r = sinkhorn(&cost, &mu, &nu, eps, 1e-12).unwrap();
            let (rows, cols) = crate::kl::marginals(&r.coupling);
            let er: f64 = rows.iter().zip(mu.weights()).map(|(x, y)| (x - y).abs()).sum();
            let ec: f64 = cols.iter().zip(nu.weights()).map(|(x, y)| (x - y).abs()).sum();
            prop_assert!(er <= 1e-12 && ec <= 1e-12);
        }

        #[test]
        fn exploitability_is_nonnegative_and_row_shift_invariant(
            (c, a, b, _eps) in small_instance(),
            shift in -5.0f64..5.0,
        ) {
            let (cost, mu, _) = build(&c, &a, &b);
            let (n, m) = cost.dim();
            let mut raw = Array2::from_shape_vec((n, m), b.iter().cycle().take(n * m).cloned().collect()).unwrap();
            for (mut row, &w) in raw.outer_iter_mut().zip(mu.weights()) {
                let s = row.sum();
                row.mapv_inplace(|v| v * w / s);
            }
            let gamma = Coupling::from_linear(&raw).unwrap();
            let psi = TotalCostMatrix::new(cost.values().clone()).unwrap();
            let e0 = exploitability(&gamma, &psi, &mu).unwrap();
            prop_assert!(e0 >= 0.0);
            let mut shifted = cost.values().clone();
            shifted.row_mut(0).mapv_inplace(|v| v + shift);
            let e1 = exploitability(&gamma, &TotalCostMatrix::new(shifted).unwrap(), &mu).unwrap();
            prop_assert!((e0 - e1).abs() <= 1e-12 * (1.0 + e0.abs()));
        }

        #[test]
        fn gibbs_residual_ignores_row_constants(
            (c, a, b, eps) in small_instance(),
            shifts in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let (cost, mu, nu) = build(&c, &a, &b);
            let gamma = sinkhorn(&cost, &mu, &nu, eps, 1e-12).unwrap().coupling;
            let base = TotalCostMatrix::new(cost.values().clone()).unwrap();
            let mut shifted = cost.values().clone();
            for (mut row, s) in shifted.outer_iter_mut().zip(shifts.iter().cycle()) {
                row.mapv_inplace(|v| v + s);
            }
            let r0 = gibbs_residual_with(&gamma, &mu, &base, eps).unwrap();
            let r1 = gibbs_residual_with(&gamma, &mu, &TotalCostMatrix::new(shifted).unwrap(), eps).unwrap();
            prop_assert!((r0 - r1).abs() <= 1e-12);
        }

        #[test]
        fn transport_part_grows_with_epsilon(
            c in proptest::collection::vec(0.0f64..3.0, 4),
            p in 0.1f64..0.9,
            q in 0.1f64..0.9,
            e1 in 0.05f64..2.0,
            factor in 1.05f64..4.0,
        ) {
            let (cost, mu, nu) = build(&c, &[p, 1.0 - p], &[q, 1.0 - q]);
            // Couplings of 2x2 marginals are a segment; evaluate c . gamma on
            // the exact Sinkhorn solutions at two temperatures.
            let lin = |eps: f64| {
                let g = sinkhorn(&cost, &mu, &nu, eps, 1e-13).unwrap().coupling.to_linear();
                (&g * cost.values()).sum()
            };
            prop_assert!(lin(e1) <= lin(e1 * factor) + 1e-10);
        }
    }
}
