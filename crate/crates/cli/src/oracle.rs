//! Built-in tiny instances checked against brute-force and Sinkhorn oracles.

use cne_core::diagnostics::{brute_force_minimize_refined, sinkhorn};
use cne_core::dykstra::{dykstra_solve, DykstraConfig, ProxList};
use cne_core::kl::Coupling;
use cne_core::model::{
    CongestionSpec, CostMatrix, DiscreteSpace, InteractionMatrix, PotentialVector, ProbabilityVector,
    ProblemSpec,
};
use cne_core::prox::{FirstMarginalProx, SecondMarginalProx};
use cne_core::schemes::{solve_implicit, SchemeConfig};
use ndarray::{array, Array2};

pub const ORACLE_RESOLUTION: usize = 200;
pub const ORACLE_REFINEMENTS: usize = 3;

#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

fn line(n: usize) -> DiscreteSpace {
    DiscreteSpace::from_1d(&(0..n).map(|k| k as f64).collect::<Vec<_>>()).expect("distinct points")
}

/// 3 types x 3 strategies, quadratic cost, power-2 congestion,
/// `sum phi^2 = 0.16`, `eps = 0.5`.
pub fn convex_3x3() -> ProblemSpec {
    let x = line(3);
    let cost = CostMatrix::new(Array2::from_shape_fn((3, 3), |(i, j)| (i as f64 - j as f64).powi(2)))
        .expect("finite cost");
    ProblemSpec::new(
        x.clone(),
        x,
        ProbabilityVector::new(vec![0.5, 0.3, 0.2]).expect("probability"),
        cost,
        CongestionSpec::power(2.0).expect("q > 1"),
        InteractionMatrix::new(array![[0.2, 0.1, 0.0], [0.1, 0.2, 0.1], [0.0, 0.1, 0.2]]).expect("symmetric"),
        PotentialVector::new(vec![0.0, 0.1, 0.3]).expect("finite"),
        0.5,
    )
    .expect("consistent instance")
}

/// Two mirrored types and strategies.
pub fn symmetric_2x2() -> ProblemSpec {
    let x = line(2);
    ProblemSpec::new(
        x.clone(),
        x,
        ProbabilityVector::new(vec![0.5, 0.5]).expect("probability"),
        CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).expect("finite"),
        CongestionSpec::power(2.0).expect("q > 1"),
        InteractionMatrix::new(array![[0.1, 0.3], [0.3, 0.1]]).expect("symmetric"),
        PotentialVector::new(vec![0.2, 0.2]).expect("finite"),
        0.5,
    )
    .expect("consistent instance")
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Runs the built-in checks.
pub fn run_oracles() -> anyhow::Result<Vec<OracleCheck>> {
    let mut out = Vec::new();
    let cfg = SchemeConfig::default();

    let p = convex_3x3();
    let solved = solve_implicit(&p, &cfg)?;
    let brute = brute_force_minimize_refined(&p, ORACLE_RESOLUTION, ORACLE_REFINEMENTS)?;
    out.push(OracleCheck {
        name: "implicit_vs_brute_force_3x3",
        passed: solved.converged && l1(&solved.nu, brute.weights()) <= 1e-4,
        value: l1(&solved.nu, brute.weights()),
        limit: 1e-4,
    });

    let s = symmetric_2x2();
    let solved = solve_implicit(&s, &cfg)?;
    let gap = l1(&solved.nu, &[0.5, 0.5]);
    out.push(OracleCheck {
        name: "symmetric_2x2_splits_evenly",
        passed: solved.converged && gap <= 1e-10,
        value: gap,
        limit: 1e-10,
    });

    let cost = CostMatrix::new(Array2::from_shape_fn((6, 5), |(i, j)| {
        ((i as f64) * 0.7 - (j as f64) * 0.9).abs().powf(1.5)
    }))?;
    let mu = ProbabilityVector::normalized(vec![1.0, 2.0, 3.0, 1.0, 0.5, 2.5])?;
    let nu = ProbabilityVector::normalized(vec![2.0, 1.0, 1.0, 3.0, 1.0])?;
    let eps = 0.3;
    let kernel = Coupling::from_log(cost.values().mapv(|c| -c / eps))?;
    let list = ProxList::new(vec![
        Box::new(FirstMarginalProx::new(0, mu.weights())?),
        Box::new(SecondMarginalProx::new(0, nu.weights())?),
    ])?;
    let dcfg = DykstraConfig {
        tol_nu: 1e-14,
        tol_marginal: 1e-14,
        ..DykstraConfig::default()
    };
    let d = dykstra_solve(vec![kernel], list, &dcfg)?;
    let sk = sinkhorn(&cost, &mu, &nu, eps, 1e-15)?;
    let diff = (&d.gamma[0].to_linear() - &sk.coupling.to_linear())
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    out.push(OracleCheck {
        name: "dykstra_two_marginals_vs_sinkhorn",
        passed: diff <= 1e-8,
        value: diff,
        limit: 1e-8,
    });
    Ok(out)
}
