use cne_core::diagnostics::{brute_force_minimize_refined, exploitability, total_cost};
use cne_core::model::{
    CongestionSpec, CostMatrix, DiscreteSpace, InteractionMatrix, PotentialVector, ProbabilityVector,
    ProblemSpec,
};
use cne_core::schemes::{solve, solve_implicit, Scheme, SchemeConfig};
use ndarray::{array, Array2};

fn tiny(eps: f64) -> ProblemSpec {
    let x = DiscreteSpace::from_1d(&[0.0, 1.0, 2.0]).unwrap();
    let y = DiscreteSpace::from_1d(&[0.0, 1.5, 3.0]).unwrap();
    ProblemSpec::new(
        x,
        y,
        ProbabilityVector::new(vec![0.2, 0.5, 0.3]).unwrap(),
        CostMatrix::new(Array2::from_shape_fn((3, 3), |(i, j)| (i as f64 - 1.5 * j as f64).powi(2))).unwrap(),
        CongestionSpec::power(2.0).unwrap(),
        InteractionMatrix::new(array![[0.1, 0.05, 0.0], [0.05, 0.1, 0.05], [0.0, 0.05, 0.1]]).unwrap(),
        PotentialVector::new(vec![0.3, 0.0, 0.2]).unwrap(),
        eps,
    )
    .unwrap()
}

#[test]
fn implicit_solution_minimizes_the_objective() {
    let p = tiny(0.4);
    let r = solve_implicit(&p, &SchemeConfig::default()).unwrap();
    let brute = brute_force_minimize_refined(&p, 200, 3).unwrap();
    let gap: f64 = r.nu.iter().zip(brute.weights()).map(|(a, b)| (a - b).abs()).sum();
    assert!(r.converged);
    assert!(gap <= 1e-4, "gap {gap}");
}

#[test]
fn exploitability_shrinks_with_the_noise_level() {
    let cfg = SchemeConfig { scheme: Scheme::SemiImplicit, ..SchemeConfig::default() };
    let mut last = f64::INFINITY;
    for eps in [1.0, 0.3, 0.1, 0.03] {
        let p = tiny(eps);
        let r = solve(&p, &cfg).unwrap();
        assert!(r.converged);
        let psi = total_cost(&p, &r.nu).unwrap();
        let e = exploitability(&r.gamma, &psi, &p.mu).unwrap();
        assert!((e - r.exploitability.unwrap()).abs() <= 1e-12);
        assert!(e < last, "eps {eps}: {e} !< {last}");
        last = e;
    }
    assert!(last < 1e-2);
}
