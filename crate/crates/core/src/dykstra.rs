//! Generalized Dykstra splitting for KL proximal problems.
//!
//! Starting from a kernel `K`, each step feeds `gamma * z` to the next prox
//! in the cycle, where `z` is the correction that prox left behind one cycle
//! earlier, and stores the new correction `(gamma * z) / prox(gamma * z)`.
//! Everything is kept in log form, so products and quotients are sums and
//! differences of log tables.

use std::time::Instant;

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kl::Coupling;
use crate::prox::Prox;

/// Stopping rule for [`dykstra_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DykstraConfig {
    /// Bound on the l1 change of every block's column marginal over one cycle.
    pub tol_nu: f64,
    /// Bound on the summed l1 violation of the hard constraints.
    pub tol_marginal: f64,
    pub max_cycles: usize,
    /// Record every `trace_every`-th cycle (the last one is always recorded).
    pub trace_every: usize,
}

impl Default for DykstraConfig {
    fn default() -> Self {
        Self {
            tol_nu: 1e-7,
            tol_marginal: 1e-8,
            max_cycles: 20_000,
            trace_every: 1,
        }
    }
}

impl DykstraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_nu > 0.0) || !(self.tol_marginal > 0.0) {
            return Err(Error::InvalidConfig("Dykstra tolerances must be > 0".into()));
        }
        if self.max_cycles == 0 {
            return Err(Error::InvalidConfig("max_cycles must be >= 1".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidConfig("trace_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub cycle: usize,
    pub nu_change: f64,
    pub marginal_residual: f64,
    pub seconds: f64,
}

/// Ordered prox operators. Soft terms run first and hard constraints last,
/// each group keeping the order it was given in.
pub struct ProxList {
    proxes: Vec<Box<dyn Prox>>,
}

impl ProxList {
    pub fn new(proxes: Vec<Box<dyn Prox>>) -> Result<Self> {
        if proxes.is_empty() {
            return Err(Error::InvalidConfig("prox list must not be empty".into()));
        }
        let (mut soft, hard): (Vec<_>, Vec<_>) =
            proxes.into_iter().partition(|p| !p.is_exact_constraint());
        soft.extend(hard);
        Ok(Self { proxes: soft })
    }

    pub fn len(&self) -> usize {
        self.proxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proxes.is_empty()
    }

    /// Operator names in cycle order.
    pub fn names(&self) -> Vec<String> {
        self.proxes.iter().map(|p| p.name().to_string()).collect()
    }
}

/// Outcome of a Dykstra run.
#[derive(Debug, Clone)]
pub struct DykstraResult {
    pub gamma: Vec<Coupling>,
    pub cycles: usize,
    pub prox_evaluations: usize,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub nu_change: f64,
    pub marginal_residual: f64,
}

/// Summary of one [`Dykstra::run`] call.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub cycles: usize,
    pub converged: bool,
    pub nu_change: f64,
    pub marginal_residual: f64,
    pub trace: Vec<TraceRow>,
}

/// Iteration state: current blocks plus one correction table per
/// (prox, touched block).
pub struct Dykstra {
    proxes: ProxList,
    state: Vec<Coupling>,
    corrections: Vec<Vec<Option<Array2<f64>>>>,
    last_nu: Vec<Array1<f64>>,
    diverged: bool,
    cycles: usize,
    prox_evaluations: usize,
}

impl Dykstra {
    pub fn new(kernel: Vec<Coupling>, proxes: ProxList) -> Result<Self> {
        if kernel.is_empty() {
            return Err(Error::InvalidConfig("block state must not be empty".into()));
        }
        for (b, k) in kernel.iter().enumerate() {
            if let Some(((i, j), v)) = k.log_values().indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::Precondition(format!(
                    "kernel block {b} entry ({i}, {j}) has log value {v}; kernels must be strictly positive"
                )));
            }
        }
        let corrections = proxes
            .proxes
            .iter()
            .map(|p| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(b, k)| p.touches(b).then(|| Array2::zeros(k.dim())))
                    .collect()
            })
            .collect();
        let last_nu = kernel.iter().map(|k| k.log_col_sums().mapv(f64::exp)).collect();
        Ok(Self {
            proxes,
            state: kernel,
            corrections,
            last_nu,
            diverged: false,
            cycles: 0,
            prox_evaluations: 0,
        })
    }

    pub fn state(&self) -> &[Coupling] {
        &self.state
    }

    pub fn into_state(self) -> Vec<Coupling> {
        self.state
    }

    pub fn proxes(&self) -> &ProxList {
        &self.proxes
    }

    /// Log correction table of prox `k` (in cycle order) on `block`.
    pub fn correction(&self, k: usize, block: usize) -> Option<&Array2<f64>> {
        self.corrections[k][block].as_ref()
    }

    pub fn cycles(&self) -> usize {
        self.cycles
    }

    pub fn prox_evaluations(&self) -> usize {
        self.prox_evaluations
    }

    /// Applies prox `k` (in cycle order) with its lagged correction.
    pub fn step(&mut self, k: usize) -> Result<()> {
        let prox = &self.proxes.proxes[k];
        let corrections = &mut self.corrections[k];
        for (b, z) in corrections.iter_mut().enumerate() {
            if let Some(z) = z {
                let log = self.state[b].log_values_mut();
                // Input to the prox is gamma * z; z keeps a copy of it.
                Zip::from(&mut *log).and(&mut *z).for_each(|g, c| {
                    *g += *c;
                    *c = *g;
                });
            }
        }
        prox.apply(&mut self.state)
            .map_err(|e| Error::ProxFailed {
                prox: prox.name().to_string(),
                cycle: self.cycles + 1,
                source: Box::new(e),
            })?;
        for (b, z) in corrections.iter_mut().enumerate() {
            if let Some(z) = z {
                Zip::from(z)
                    .and(self.state[b].log_values())
                    .for_each(|c, &g| *c -= g);
            }
        }
        self.prox_evaluations += 1;
        Ok(())
    }

    fn marginal_residual(&self) -> f64 {
        self.proxes
            .proxes
            .iter()
            .filter(|p| p.is_exact_constraint())
            .map(|p| p.constraint_residual(&self.state))
            .sum()
    }

    /// Runs one full cycle; returns the l1 change of the column marginals
    /// and the hard-constraint residual.
    pub fn cycle(&mut self) -> Result<(f64, f64)> {
        for k in 0..self.proxes.len() {
            self.step(k)?;
        }
        self.cycles += 1;
        let mut change = 0.0;
        for (b, block) in self.state.iter().enumerate() {
            let nu = block.log_col_sums().mapv(f64::exp);
            if nu.iter().any(|v| !v.is_finite()) {
                self.diverged = true;
            }
            change += nu
                .iter()
                .zip(self.last_nu[b].iter())
                .map(|(a, c)| (a - c).abs())
                .sum::<f64>();
            self.last_nu[b] = nu;
        }
        Ok((change, self.marginal_residual()))
    }

    /// Cycles until both tolerances hold or `cfg.max_cycles` more cycles ran.
    pub fn run(&mut self, cfg: &DykstraConfig) -> Result<RunSummary> {
        cfg.validate()?;
        let start = Instant::now();
        let mut trace = Vec::new();
        let mut last = (f64::INFINITY, f64::INFINITY);
        let mut converged = false;
        for c in 1..=cfg.max_cycles {
            last = self.cycle()?;
            converged = last.0 <= cfg.tol_nu && last.1 <= cfg.tol_marginal;
            if c % cfg.trace_every == 0 || converged || c == cfg.max_cycles {
                trace.push(TraceRow {
                    cycle: self.cycles,
                    nu_change: last.0,
                    marginal_residual: last.1,
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
            if converged {
                break;
            }
            if self.diverged || last.0.is_nan() {
                return Err(Error::Precondition(format!(
                    "iteration diverged in cycle {} (nu change {})",
                    self.cycles, last.0
                )));
            }
        }
        Ok(RunSummary {
            cycles: trace.last().map_or(0, |t| t.cycle),
            converged,
            nu_change: last.0,
            marginal_residual: last.1,
            trace,
        })
    }

    /// Multiplies column `j` of `block` by `exp(shift[j])`, i.e. moves the
    /// iteration onto the kernel `K * exp(shift)` while keeping every stored
    /// correction, so the run continues as if it had started from the new
    /// kernel with the current dual state.
    pub fn shift_kernel_columns(&mut self, block: usize, shift: &[f64]) -> Result<()> {
        let log = self.state[block].log_values_mut();
        if shift.len() != log.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "column shift has {} entries for {} columns",
                shift.len(),
                log.ncols()
            )));
        }
        let s = ndarray::ArrayView1::from(shift);
        for mut row in log.rows_mut() {
            Zip::from(&mut row).and(&s).for_each(|v, &d| *v += d);
        }
        self.last_nu[block] = self.state[block].log_col_sums().mapv(f64::exp);
        Ok(())
    }
}

/// Runs Dykstra from `kernel` until convergence or `cfg.max_cycles`.
pub fn dykstra_solve(kernel: Vec<Coupling>, proxes: ProxList, cfg: &DykstraConfig) -> Result<DykstraResult> {
    let mut solver = Dykstra::new(kernel, proxes)?;
    let summary = solver.run(cfg)?;
    let prox_evaluations = solver.prox_evaluations();
    Ok(DykstraResult {
        gamma: solver.into_state(),
        cycles: summary.cycles,
        prox_evaluations,
        trace: summary.trace,
        converged: summary.converged,
        nu_change: summary.nu_change,
        marginal_residual: summary.marginal_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prox::{prox_first_marginal, FirstMarginalProx, SecondMarginalProx};
    use crate::model::ProbabilityVector;
    use ndarray::array;

    fn kernel() -> Coupling {
        Coupling::from_linear(&array![[1.0, 0.5, 0.1], [0.2, 1.0, 0.3]]).unwrap()
    }

    #[test]
    fn single_projection_is_stationary_after_one_cycle() {
        let mu = [0.4, 0.6];
        let list = ProxList::new(vec![Box::new(FirstMarginalProx::new(0, &mu).unwrap())]).unwrap();
        let mut d = Dykstra::new(vec![kernel()], list).unwrap();
        d.cycle().unwrap();
        let after_one = d.state()[0].clone();
        let expected =
            prox_first_marginal(&kernel(), &ProbabilityVector::new(mu.to_vec()).unwrap()).unwrap();
        for (a, b) in after_one.log_values().iter().zip(expected.log_values().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        let (change, residual) = d.cycle().unwrap();
        assert!(change < 1e-15);
        assert!(residual < 1e-15);
    }

    #[test]
    fn hard_constraints_run_last() {
        use crate::prox::{CongestionProx, NewtonConfig};
        use std::sync::Arc;
        let list = ProxList::new(vec![
            Box::new(FirstMarginalProx::new(0, &[0.5, 0.5]).unwrap()),
            Box::new(CongestionProx::new(
                0,
                Arc::new(crate::model::CongestionSpec::power(2.0).unwrap()),
                1.0,
                NewtonConfig::default(),
            )),
        ])
        .unwrap();
        assert_eq!(list.names(), vec!["congestion", "first_marginal"]);
    }

    #[test]
    fn correction_bookkeeping_holds_each_step() {
        let list = ProxList::new(vec![
            Box::new(FirstMarginalProx::new(0, &[0.3, 0.7]).unwrap()),
            Box::new(SecondMarginalProx::new(0, &[0.2, 0.5, 0.3]).unwrap()),
        ])
        .unwrap();
        let mut d = Dykstra::new(vec![kernel()], list).unwrap();
        for _ in 0..5 {
            for k in 0..2 {
                let before = d.state()[0].log_values().clone();
                let z_old = d.correction(k, 0).unwrap().clone();
                d.step(k).unwrap();
                let lhs = d.state()[0].log_values() + d.correction(k, 0).unwrap();
                let rhs = &before + &z_old;
                for (a, b) in lhs.iter().zip(rhs.iter()) {
                    assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
                }
            }
        }
    }

    #[test]
    fn rejects_empty_lists_and_zero_kernels() {
        assert!(ProxList::new(vec![]).is_err());
        let list = ProxList::new(vec![Box::new(FirstMarginalProx::new(0, &[0.5, 0.5]).unwrap())])
            .unwrap();
        let bad = Coupling::from_linear(&array![[1.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(Dykstra::new(vec![bad], list).is_err());
    }

    #[test]
    fn nonconvergence_is_reported_not_raised() {
        let list = ProxList::new(vec![
            Box::new(FirstMarginalProx::new(0, &[0.3, 0.7]).unwrap()),
            Box::new(SecondMarginalProx::new(0, &[0.2, 0.5, 0.3]).unwrap()),
        ])
        .unwrap();
        let cfg = DykstraConfig {
            tol_nu: 1e-300,
            tol_marginal: 1e-300,
            max_cycles: 3,
            trace_every: 1,
        };
        let res = dykstra_solve(vec![kernel()], list, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.cycles, 3);
        assert_eq!(res.trace.len(), 3);
        assert_eq!(res.prox_evaluations, 6);
    }
}
