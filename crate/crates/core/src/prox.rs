//! KL proximal operators and the scalar root solver behind them.
//!
//! Every operator here rescales whole rows or whole columns of its input, so
//! the work is a log-sum-exp reduction followed by one additive shift of the
//! log table.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::kl::{log_col_sums, log_row_sums, log_sum_exp, Coupling};
use crate::model::{CongestionSpec, InteractionMatrix, ProbabilityVector};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-11;
pub const DEFAULT_NEWTON_MAX_STEPS: usize = 50;

/// Tolerance and step budget for the inner Newton solves.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_NEWTON_TOL,
            max_steps: DEFAULT_NEWTON_MAX_STEPS,
        }
    }
}

/// A scalar congestion derivative `g` with its slope.
pub trait CongestionDerivative: Send + Sync {
    fn value(&self, t: f64) -> f64;
    fn slope(&self, t: f64) -> f64;

    /// `g(e^u)`.
    fn value_at_log(&self, u: f64) -> f64 {
        self.value(u.exp())
    }

    /// `t g'(t)` at `t = e^u`.
    fn elasticity_at_log(&self, u: f64) -> f64 {
        let t = u.exp();
        t * self.slope(t)
    }

    fn is_nondecreasing(&self) -> bool {
        true
    }

    /// `g` is identically zero.
    fn vanishes(&self) -> bool {
        false
    }
}

impl CongestionDerivative for CongestionSpec {
    fn value(&self, t: f64) -> f64 {
        self.derivative(t)
    }

    fn slope(&self, t: f64) -> f64 {
        self.second_derivative(t)
    }

    fn value_at_log(&self, u: f64) -> f64 {
        self.derivative_at_log(u)
    }

    fn elasticity_at_log(&self, u: f64) -> f64 {
        CongestionSpec::elasticity_at_log(self, u)
    }

    fn is_nondecreasing(&self) -> bool {
        self.has_monotone_derivative()
    }

    fn vanishes(&self) -> bool {
        self.is_none()
    }
}

/// `h(t) = f(t) - t`, the derivative of `H(t) = F(t) - t^2 / 2`.
#[derive(Debug, Clone, Copy)]
pub struct StronglyConvexRemainder(pub CongestionSpec);

impl CongestionDerivative for StronglyConvexRemainder {
    fn value(&self, t: f64) -> f64 {
        self.0.derivative(t) - t
    }

    fn slope(&self, t: f64) -> f64 {
        self.0.second_derivative(t) - 1.0
    }

    fn value_at_log(&self, u: f64) -> f64 {
        self.0.derivative_at_log(u) - u.exp()
    }

    fn elasticity_at_log(&self, u: f64) -> f64 {
        self.0.elasticity_at_log(u) - u.exp()
    }

    fn is_nondecreasing(&self) -> bool {
        self.0.has_monotone_derivative() && self.0.admits_strongly_convex_split()
    }
}

/// `g(t) = a t`.
#[derive(Debug, Clone, Copy)]
pub struct Linear(pub f64);

impl CongestionDerivative for Linear {
    fn value(&self, t: f64) -> f64 {
        self.0 * t
    }

    fn slope(&self, _t: f64) -> f64 {
        self.0
    }

    fn is_nondecreasing(&self) -> bool {
        self.0 >= 0.0
    }

    fn vanishes(&self) -> bool {
        self.0 == 0.0
    }
}

/// The equation `nu = s exp(-g(nu) / eps)` for one column.
#[derive(Clone, Copy)]
pub struct ScalarRootProblem<'a> {
    /// `ln s`, kept in log form so tiny column masses do not underflow.
    pub log_mass: f64,
    pub epsilon: f64,
    pub g: &'a dyn CongestionDerivative,
}

impl<'a> ScalarRootProblem<'a> {
    pub fn new(s: f64, epsilon: f64, g: &'a dyn CongestionDerivative) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Precondition(format!("column mass must be > 0, got {s}")));
        }
        Self::from_log_mass(s.ln(), epsilon, g)
    }

    pub fn from_log_mass(
        log_mass: f64,
        epsilon: f64,
        g: &'a dyn CongestionDerivative,
    ) -> Result<Self> {
        if !log_mass.is_finite() {
            return Err(Error::Precondition(format!(
                "log column mass must be finite, got {log_mass}"
            )));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Precondition(format!("epsilon must be > 0, got {epsilon}")));
        }
        Ok(Self {
            log_mass,
            epsilon,
            g,
        })
    }

    /// `r(u) = u + g(e^u) / eps - ln s` and its derivative in `u = ln nu`.
    fn residual(&self, u: f64) -> (f64, f64) {
        let r = u + self.g.value_at_log(u) / self.epsilon - self.log_mass;
        let dr = 1.0 + self.g.elasticity_at_log(u) / self.epsilon;
        (r, dr)
    }
}

/// Solves for `nu`; see [`solve_monotone_scalar_log`].
pub fn solve_monotone_scalar(problem: &ScalarRootProblem<'_>, tol: f64) -> Result<f64> {
    solve_monotone_scalar_log(problem, tol).map(f64::exp)
}

/// Returns `ln nu` where `nu` solves `ln nu + g(nu) / eps = ln s`.
///
/// For nondecreasing `g` the residual is strictly increasing in `ln nu` and
/// the root is unique. Otherwise the smallest root is returned, or
/// [`Error::RootNotBracketed`] when the residual never changes sign.
pub fn solve_monotone_scalar_log(problem: &ScalarRootProblem<'_>, tol: f64) -> Result<f64> {
    if problem.g.vanishes() {
        return Ok(problem.log_mass);
    }
    let f = |u: f64| problem.residual(u);
    if problem.g.is_nondecreasing() {
        safeguarded_newton(f, problem.log_mass, tol, problem.log_mass)
    } else {
        smallest_root(f, problem.log_mass, tol, problem.log_mass)
    }
}

const MAX_BRACKET_EXPANSIONS: usize = 80;
const MAX_ROOT_ITERATIONS: usize = 400;

/// Newton with a bisection fallback on an increasing residual.
pub(crate) fn safeguarded_newton<F>(f: F, u0: f64, tol: f64, log_mass: f64) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let (r0, _) = f(u0);
    if r0.abs() <= tol {
        return Ok(u0);
    }
    if r0.is_nan() {
        return Err(Error::RootNotBracketed {
            log_mass,
            reason: "residual is NaN at the initial guess".into(),
        });
    }
    let (mut lo, mut hi) = (u0, u0);
    let mut step = u0.abs().max(1.0);
    let mut bracketed = false;
    for _ in 0..MAX_BRACKET_EXPANSIONS {
        if r0 > 0.0 {
            lo = u0 - step;
            let (r, _) = f(lo);
            if r <= 0.0 {
                bracketed = true;
                break;
            }
            hi = lo;
        } else {
            hi = u0 + step;
            let (r, _) = f(hi);
            if r >= 0.0 {
                bracketed = true;
                break;
            }
            lo = hi;
        }
        step *= 2.0;
    }
    if !bracketed {
        return Err(Error::RootNotBracketed {
            log_mass,
            reason: "residual keeps its sign over the search range".into(),
        });
    }
    bracket_solve(&f, lo, hi, u0.clamp(lo, hi), tol, log_mass)
}

/// Newton iterations confined to `[lo, hi]` where `r(lo) <= 0 <= r(hi)`.
fn bracket_solve<F>(f: &F, mut lo: f64, mut hi: f64, start: f64, tol: f64, log_mass: f64) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let mut u = start;
    let (mut r, mut dr) = f(u);
    let mut dx_old = hi - lo;
    let mut dx = dx_old;
    for _ in 0..MAX_ROOT_ITERATIONS {
        if r.abs() <= tol {
            return Ok(u);
        }
        if r > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            return Ok(u);
        }
        // Bisect when Newton leaves the bracket or stops contracting.
        let newton = u - r / dr;
        let slow = (2.0 * r).abs() > (dx_old * dr).abs();
        dx_old = dx;
        if !slow && dr > 0.0 && newton.is_finite() && newton > lo && newton < hi {
            dx = u - newton;
            u = newton;
        } else {
            dx = 0.5 * (hi - lo);
            u = lo + dx;
        }
        (r, dr) = f(u);
        if r.is_nan() {
            return Err(Error::RootNotBracketed {
                log_mass,
                reason: format!("residual is NaN at ln nu = {u}"),
            });
        }
    }
    Err(Error::NewtonNonConvergence {
        steps: MAX_ROOT_ITERATIONS,
        residual: r.abs(),
        iterate: vec![u.exp()],
    })
}

/// Smallest root of a possibly non-monotone residual, scanning upward from
/// well below `u0`. The residual tends to `-inf` as `nu -> 0` when `g` is
/// bounded there and to `+inf` for barrier-type `g`; either sign is accepted.
fn smallest_root<F>(f: F, u0: f64, tol: f64, log_mass: f64) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    const SPAN: f64 = 60.0;
    const STEP: f64 = 0.125;
    let (r0, _) = f(u0);
    if r0.abs() <= tol {
        return Ok(u0);
    }
    let start = u0 - SPAN;
    let (r_start, _) = f(start);
    if r_start.is_nan() {
        return Err(Error::RootNotBracketed {
            log_mass,
            reason: "residual is NaN below the initial guess".into(),
        });
    }
    if r_start == 0.0 {
        return Ok(start);
    }
    let falling = r_start > 0.0;
    let steps = (2.0 * SPAN / STEP) as usize;
    let mut prev = start;
    for k in 1..=steps {
        let u = start + STEP * k as f64;
        let (r, _) = f(u);
        let crossed = if falling { r <= 0.0 } else { r >= 0.0 };
        if crossed {
            return if falling {
                let flipped = |v: f64| {
                    let (a, b) = f(v);
                    (-a, -b)
                };
                bracket_solve(&flipped, prev, u, prev, tol, log_mass)
            } else {
                bracket_solve(&f, prev, u, prev, tol, log_mass)
            };
        }
        prev = u;
    }
    Err(Error::RootNotBracketed {
        log_mass,
        reason: "no sign change of the non-monotone residual".into(),
    })
}

fn add_row_shift(log: &mut Array2<f64>, shift: &Array1<f64>) {
    for (mut row, &s) in log.axis_iter_mut(Axis(0)).zip(shift.iter()) {
        if s != 0.0 {
            row.mapv_inplace(|v| v + s);
        }
    }
}

fn add_col_shift(log: &mut Array2<f64>, shift: &Array1<f64>) {
    for mut row in log.axis_iter_mut(Axis(0)) {
        Zip::from(&mut row).and(shift).for_each(|v, &s| *v += s);
    }
}

fn shift_from(target_log: f64, current_log: f64) -> f64 {
    if target_log == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        target_log - current_log
    }
}

/// Rescales each row of `log` so its mass becomes `exp(log_mu[i])`.
pub(crate) fn first_marginal_in_place(log: &mut Array2<f64>, log_mu: &[f64]) -> Result<()> {
    let lse = log_row_sums(log);
    let mut shift = Array1::zeros(lse.len());
    for (i, (&l, &m)) in lse.iter().zip(log_mu).enumerate() {
        if l == f64::NEG_INFINITY && m > f64::NEG_INFINITY {
            return Err(Error::InfeasibleProx {
                row: i,
                target: m.exp(),
            });
        }
        shift[i] = if l == f64::NEG_INFINITY { 0.0 } else { shift_from(m, l) };
    }
    add_row_shift(log, &shift);
    Ok(())
}

/// `(prox(theta))[i, j] = mu_i theta[i, j] / sum_k theta[i, k]`.
pub fn prox_first_marginal(theta: &Coupling, mu: &ProbabilityVector) -> Result<Coupling> {
    if mu.len() != theta.dim().0 {
        return Err(Error::DimensionMismatch(format!(
            "mu has {} weights for {} rows",
            mu.len(),
            theta.dim().0
        )));
    }
    let log_mu: Vec<f64> = mu.weights().iter().map(|w| w.ln()).collect();
    let mut out = theta.log_values().clone();
    first_marginal_in_place(&mut out, &log_mu)?;
    Ok(Coupling::from_log_unchecked(out))
}

/// Rescales each column of `log` so its mass becomes `exp(log_nu[j])`.
pub(crate) fn second_marginal_in_place(log: &mut Array2<f64>, log_nu: &[f64]) -> Result<()> {
    let lse = log_col_sums(log);
    let mut shift = Array1::zeros(lse.len());
    for (j, (&l, &n)) in lse.iter().zip(log_nu).enumerate() {
        if l == f64::NEG_INFINITY && n > f64::NEG_INFINITY {
            return Err(Error::InfeasibleProx {
                row: j,
                target: n.exp(),
            });
        }
        shift[j] = if l == f64::NEG_INFINITY { 0.0 } else { shift_from(n, l) };
    }
    add_col_shift(log, &shift);
    Ok(())
}

/// Solves every column equation and applies the resulting shifts.
/// Returns the new log column masses.
pub(crate) fn congestion_in_place(
    log: &mut Array2<f64>,
    g: &dyn CongestionDerivative,
    epsilon: f64,
    cfg: &NewtonConfig,
) -> Result<Array1<f64>> {
    let lse = log_col_sums(log);
    if g.vanishes() {
        return Ok(lse);
    }
    let mut shift = Array1::zeros(lse.len());
    let mut log_nu = lse.clone();
    for (j, &l) in lse.iter().enumerate() {
        if l == f64::NEG_INFINITY {
            continue;
        }
        let problem = ScalarRootProblem::from_log_mass(l, epsilon, g)?;
        let u = solve_monotone_scalar_log(&problem, cfg.tol)?;
        shift[j] = u - l;
        log_nu[j] = u;
    }
    add_col_shift(log, &shift);
    Ok(log_nu)
}

/// Congestion prox: `gamma[i, j] = theta[i, j] exp(-g(nu_j) / eps)` with
/// `nu_j = S_j exp(-g(nu_j) / eps)`, `S_j` the column masses of `theta`.
pub fn prox_congestion(
    theta: &Coupling,
    g: &dyn CongestionDerivative,
    epsilon: f64,
    cfg: &NewtonConfig,
) -> Result<Coupling> {
    let mut out = theta.log_values().clone();
    congestion_in_place(&mut out, g, epsilon, cfg)?;
    Ok(Coupling::from_log_unchecked(out))
}

/// Solves `ln nu_j + (nu_j + (phi nu)_j) / eps = ln S_j` by damped Newton in
/// `u = ln nu`. Columns with zero mass stay at zero.
pub(crate) fn solve_interaction_system(
    log_mass: &Array1<f64>,
    phi: &InteractionMatrix,
    epsilon: f64,
    cfg: &NewtonConfig,
) -> Result<Array1<f64>> {
    let active: Vec<usize> = (0..log_mass.len())
        .filter(|&j| log_mass[j] > f64::NEG_INFINITY)
        .collect();
    let n = active.len();
    let mut out = Array1::from_elem(log_mass.len(), f64::NEG_INFINITY);
    if n == 0 {
        return Ok(out);
    }
    let ls: Vec<f64> = active.iter().map(|&j| log_mass[j]).collect();
    let sub_phi = DMatrix::from_fn(n, n, |a, b| phi.values()[[active[a], active[b]]]);
    let residual = |u: &DVector<f64>| -> DVector<f64> {
        let nu = u.map(f64::exp);
        let coupled = sub_phi.transpose() * &nu;
        DVector::from_fn(n, |j, _| u[j] + (nu[j] + coupled[j]) / epsilon - ls[j])
    };
    let norm = |r: &DVector<f64>| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let total = log_sum_exp(ls.iter().copied()).exp();
    let mut u = DVector::from_fn(n, |j, _| ls[j] - (1.0 + total).ln());
    let mut r = residual(&u);
    let mut rn = norm(&r);
    let mut steps = 0;
    while rn > cfg.tol {
        if steps >= cfg.max_steps {
            return Err(Error::NewtonNonConvergence {
                steps,
                residual: rn,
                iterate: u.iter().map(|v| v.exp()).collect(),
            });
        }
        steps += 1;
        let nu = u.map(f64::exp);
        // d/du_k of R_j = delta_jk (1 + nu_j / eps) + phi[k, j] nu_k / eps
        let jac = DMatrix::from_fn(n, n, |j, k| {
            let diag = if j == k { 1.0 + nu[j] / epsilon } else { 0.0 };
            diag + sub_phi[(k, j)] * nu[k] / epsilon
        });
        let delta = jac.lu().solve(&(-&r)).ok_or_else(|| Error::NewtonNonConvergence {
            steps,
            residual: rn,
            iterate: nu.iter().copied().collect(),
        })?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &u + &delta * t;
            let rc = residual(&cand);
            let rcn = norm(&rc);
            if rcn.is_finite() && rcn < rn {
                u = cand;
                r = rc;
                rn = rcn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if rn <= 1e3 * cfg.tol.max(f64::EPSILON) {
                break;
            }
            return Err(Error::NewtonNonConvergence {
                steps,
                residual: rn,
                iterate: u.iter().map(|v| v.exp()).collect(),
            });
        }
    }
    for (a, &j) in active.iter().enumerate() {
        out[j] = u[a];
    }
    Ok(out)
}

pub(crate) fn interaction_in_place(
    log: &mut Array2<f64>,
    phi: &InteractionMatrix,
    epsilon: f64,
    cfg: &NewtonConfig,
) -> Result<Array1<f64>> {
    let lse = log_col_sums(log);
    if phi.len() != lse.len() {
        return Err(Error::DimensionMismatch(format!(
            "interaction is {0}x{0} for {1} columns",
            phi.len(),
            lse.len()
        )));
    }
    let log_nu = solve_interaction_system(&lse, phi, epsilon, cfg)?;
    let shift = Array1::from_shape_fn(lse.len(), |j| {
        if lse[j] == f64::NEG_INFINITY {
            0.0
        } else {
            log_nu[j] - lse[j]
        }
    });
    add_col_shift(log, &shift);
    Ok(log_nu)
}

/// Prox of `(1/eps) (1/2 sum nu^2 + 1/2 sum phi nu nu)` composed with the
/// column-sum map.
pub fn prox_interaction_energy(
    theta: &Coupling,
    phi: &InteractionMatrix,
    epsilon: f64,
    cfg: &NewtonConfig,
) -> Result<Coupling> {
    let mut out = theta.log_values().clone();
    interaction_in_place(&mut out, phi, epsilon, cfg)?;
    Ok(Coupling::from_log_unchecked(out))
}

/// Solves `sigma = S1 exp(-g(sigma)/eps1) + S2 exp(-g(sigma)/eps2)` per column
/// and rescales both blocks. Returns `ln sigma`.
pub(crate) fn shared_congestion_in_place(
    first: &mut Array2<f64>,
    second: &mut Array2<f64>,
    g: &dyn CongestionDerivative,
    epsilons: [f64; 2],
    cfg: &NewtonConfig,
) -> Result<Array1<f64>> {
    let l1 = log_col_sums(first);
    let l2 = log_col_sums(second);
    if l1.len() != l2.len() {
        return Err(Error::DimensionMismatch(
            "populations have different strategy counts".into(),
        ));
    }
    let [e1, e2] = epsilons;
    let mut log_sigma = Array1::from_elem(l1.len(), f64::NEG_INFINITY);
    if g.vanishes() {
        for j in 0..l1.len() {
            log_sigma[j] = pair_lse(l1[j], l2[j]);
        }
        return Ok(log_sigma);
    }
    let mut s1 = Array1::zeros(l1.len());
    let mut s2 = Array1::zeros(l1.len());
    for j in 0..l1.len() {
        let (a, b) = (l1[j], l2[j]);
        let total = pair_lse(a, b);
        if total == f64::NEG_INFINITY {
            continue;
        }
        // r(u) = u - ln(S1 e^{-g/e1} + S2 e^{-g/e2}), increasing in u.
        let f = |u: f64| {
            let gv = g.value_at_log(u);
            let x1 = a - gv / e1;
            let x2 = b - gv / e2;
            let lse = pair_lse(x1, x2);
            let w1 = (x1 - lse).exp();
            let w2 = (x2 - lse).exp();
            let weighted = w1 / e1 + w2 / e2;
            (u - lse, 1.0 + g.elasticity_at_log(u) * weighted)
        };
        let u = if g.is_nondecreasing() {
            safeguarded_newton(f, total, cfg.tol, total)?
        } else {
            smallest_root(f, total, cfg.tol, total)?
        };
        let gv = g.value_at_log(u);
        log_sigma[j] = u;
        s1[j] = if a == f64::NEG_INFINITY { 0.0 } else { -gv / e1 };
        s2[j] = if b == f64::NEG_INFINITY { 0.0 } else { -gv / e2 };
    }
    add_col_shift(first, &s1);
    add_col_shift(second, &s2);
    Ok(log_sigma)
}

fn pair_lse(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Joint prox of the total congestion `sum_j F(nu1_j + nu2_j)`.
pub fn prox_shared_congestion(
    theta1: &Coupling,
    theta2: &Coupling,
    g: &dyn CongestionDerivative,
    eps1: f64,
    eps2: f64,
    cfg: &NewtonConfig,
) -> Result<(Coupling, Coupling)> {
    if !(eps1 > 0.0 && eps2 > 0.0) {
        return Err(Error::Precondition("epsilons must be > 0".into()));
    }
    let mut a = theta1.log_values().clone();
    let mut b = theta2.log_values().clone();
    shared_congestion_in_place(&mut a, &mut b, g, [eps1, eps2], cfg)?;
    Ok((Coupling::from_log_unchecked(a), Coupling::from_log_unchecked(b)))
}

/// One entry of a Dykstra prox list, acting in place on a block state.
pub trait Prox: Send + Sync {
    fn name(&self) -> &str;

    /// Whether the operator may modify `block`.
    fn touches(&self, block: usize) -> bool;

    fn apply(&self, blocks: &mut [Coupling]) -> Result<()>;

    /// Hard constraints are placed last in each cycle.
    fn is_exact_constraint(&self) -> bool {
        false
    }

    /// l1 violation of the constraint, zero for soft terms.
    fn constraint_residual(&self, _blocks: &[Coupling]) -> f64 {
        0.0
    }
}

fn l1_log_gap(log_actual: &Array1<f64>, log_target: &[f64]) -> f64 {
    log_actual
        .iter()
        .zip(log_target)
        .map(|(a, b)| (a.exp() - b.exp()).abs())
        .sum()
}

fn log_weights(w: &[f64], what: &str) -> Result<Vec<f64>> {
    if let Some((k, v)) = w.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Precondition(format!(
            "{what} weight {k} is {v}; drop zero-mass points before building a prox list"
        )));
    }
    Ok(w.iter().map(|v| v.ln()).collect())
}

/// Row constraint `Lambda_1(gamma) = mu` on one block.
pub struct FirstMarginalProx {
    block: usize,
    log_mu: Vec<f64>,
}

impl FirstMarginalProx {
    pub fn new(block: usize, mu: &[f64]) -> Result<Self> {
        Ok(Self {
            block,
            log_mu: log_weights(mu, "mu")?,
        })
    }
}

impl Prox for FirstMarginalProx {
    fn name(&self) -> &str {
        "first_marginal"
    }

    fn touches(&self, block: usize) -> bool {
        block == self.block
    }

    fn apply(&self, blocks: &mut [Coupling]) -> Result<()> {
        first_marginal_in_place(blocks[self.block].log_values_mut(), &self.log_mu)
    }

    fn is_exact_constraint(&self) -> bool {
        true
    }

    fn constraint_residual(&self, blocks: &[Coupling]) -> f64 {
        l1_log_gap(&blocks[self.block].log_row_sums(), &self.log_mu)
    }
}

/// Column constraint `Lambda_2(gamma) = nu` on one block.
pub struct SecondMarginalProx {
    block: usize,
    log_nu: Vec<f64>,
}

impl SecondMarginalProx {
    pub fn new(block: usize, nu: &[f64]) -> Result<Self> {
        Ok(Self {
            block,
            log_nu: log_weights(nu, "nu")?,
        })
    }
}

impl Prox for SecondMarginalProx {
    fn name(&self) -> &str {
        "second_marginal"
    }

    fn touches(&self, block: usize) -> bool {
        block == self.block
    }

    fn apply(&self, blocks: &mut [Coupling]) -> Result<()> {
        second_marginal_in_place(blocks[self.block].log_values_mut(), &self.log_nu)
    }

    fn is_exact_constraint(&self) -> bool {
        true
    }

    fn constraint_residual(&self, blocks: &[Coupling]) -> f64 {
        l1_log_gap(&blocks[self.block].log_col_sums(), &self.log_nu)
    }
}

/// Separable congestion term on one block.
pub struct CongestionProx {
    block: usize,
    g: Arc<dyn CongestionDerivative>,
    epsilon: f64,
    newton: NewtonConfig,
}

impl CongestionProx {
    pub fn new(
        block: usize,
        g: Arc<dyn CongestionDerivative>,
        epsilon: f64,
        newton: NewtonConfig,
    ) -> Self {
        Self {
            block,
            g,
            epsilon,
            newton,
        }
    }
}

impl Prox for CongestionProx {
    fn name(&self) -> &str {
        "congestion"
    }

    fn touches(&self, block: usize) -> bool {
        block == self.block
    }

    fn apply(&self, blocks: &mut [Coupling]) -> Result<()> {
        congestion_in_place(
            blocks[self.block].log_values_mut(),
            self.g.as_ref(),
            self.epsilon,
            &self.newton,
        )
        .map(|_| ())
    }
}

/// Quadratic term `1/2 sum nu^2 + 1/2 sum phi nu nu` on one block.
pub struct InteractionProx {
    block: usize,
    phi: InteractionMatrix,
    epsilon: f64,
    newton: NewtonConfig,
}

impl InteractionProx {
    pub fn new(block: usize, phi: InteractionMatrix, epsilon: f64, newton: NewtonConfig) -> Self {
        Self {
            block,
            phi,
            epsilon,
            newton,
        }
    }
}

impl Prox for InteractionProx {
    fn name(&self) -> &str {
        "interaction"
    }

    fn touches(&self, block: usize) -> bool {
        block == self.block
    }

    fn apply(&self, blocks: &mut [Coupling]) -> Result<()> {
        interaction_in_place(
            blocks[self.block].log_values_mut(),
            &self.phi,
            self.epsilon,
            &self.newton,
        )
        .map(|_| ())
    }
}

/// Total congestion over blocks 0 and 1.
pub struct SharedCongestionProx {
    g: Arc<dyn CongestionDerivative>,
    epsilons: [f64; 2],
    newton: NewtonConfig,
}

impl SharedCongestionProx {
    pub fn new(g: Arc<dyn CongestionDerivative>, epsilons: [f64; 2], newton: NewtonConfig) -> Self {
        Self {
            g,
            epsilons,
            newton,
        }
    }
}

impl Prox for SharedCongestionProx {
    fn name(&self) -> &str {
        "shared_congestion"
    }

    fn touches(&self, block: usize) -> bool {
        block < 2
    }

    fn apply(&self, blocks: &mut [Coupling]) -> Result<()> {
        let (a, b) = blocks.split_at_mut(1);
        shared_congestion_in_place(
            a[0].log_values_mut(),
            b[0].log_values_mut(),
            self.g.as_ref(),
            self.epsilons,
            &self.newton,
        )
        .map(|_| ())
    }
}
