//! Log-domain couplings, KL divergence, Gibbs kernels and marginals.
//!
//! Row and column reductions are evaluated block by block in a fixed order,
//! so the result does not depend on how many threads take part.

use ndarray::{Array1, Array2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CostMatrix, PotentialVector};

/// Rows per block in column reductions.
const ROW_BLOCK: usize = 64;
/// Below this many entries reductions stay on the calling thread.
const PARALLEL_THRESHOLD: usize = 1 << 16;

/// A nonnegative `|I| x |J|` matrix stored by the natural log of its entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    log_values: Array2<f64>,
}

impl Coupling {
    pub fn from_log(log_values: Array2<f64>) -> Result<Self> {
        if let Some(((i, j), v)) = log_values
            .indexed_iter()
            .find(|(_, v)| v.is_nan() || **v == f64::INFINITY)
        {
            return Err(Error::Precondition(format!(
                "log entry ({i}, {j}) is {v}; entries must be finite or -inf"
            )));
        }
        Ok(Self { log_values })
    }

    pub fn from_linear(values: &Array2<f64>) -> Result<Self> {
        if let Some(((i, j), v)) = values
            .indexed_iter()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Precondition(format!(
                "entry ({i}, {j}) is {v}; entries must be finite and nonnegative"
            )));
        }
        Ok(Self {
            log_values: values.mapv(f64::ln),
        })
    }

    /// Wraps log values without validation; callers keep entries in `[-inf, inf)`.
    pub(crate) fn from_log_unchecked(log_values: Array2<f64>) -> Self {
        Self { log_values }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            log_values: Array2::zeros((rows, cols)),
        }
    }

    pub fn log_values(&self) -> &Array2<f64> {
        &self.log_values
    }

    pub(crate) fn log_values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.log_values
    }

    pub fn into_log_values(self) -> Array2<f64> {
        self.log_values
    }

    pub fn to_linear(&self) -> Array2<f64> {
        self.log_values.mapv(f64::exp)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.log_values.dim()
    }

    pub fn total_mass(&self) -> f64 {
        log_sum_exp(self.log_values.iter().copied()).exp()
    }

    pub fn log_row_sums(&self) -> Array1<f64> {
        log_row_sums(&self.log_values)
    }

    pub fn log_col_sums(&self) -> Array1<f64> {
        log_col_sums(&self.log_values)
    }
}

/// Stable `ln(sum(exp(x)))`; `-inf` for empty or all `-inf` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values
        .clone()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

fn row_lse(row: ndarray::ArrayView1<'_, f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = row.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

/// `ln(sum_j exp(m[i, j]))` for every row.
pub fn log_row_sums(m: &Array2<f64>) -> Array1<f64> {
    let rows: Vec<_> = m.axis_iter(Axis(0)).collect();
    let out: Vec<f64> = if m.len() >= PARALLEL_THRESHOLD {
        rows.into_par_iter().map(row_lse).collect()
    } else {
        rows.into_iter().map(row_lse).collect()
    };
    Array1::from(out)
}

/// `ln(sum_i exp(m[i, j]))` for every column.
pub fn log_col_sums(m: &Array2<f64>) -> Array1<f64> {
    let (rows, cols) = m.dim();
    let mut max = Array1::from_elem(cols, f64::NEG_INFINITY);
    for row in m.axis_iter(Axis(0)) {
        Zip::from(&mut max).and(&row).for_each(|a, &b| {
            if b > *a {
                *a = b
            }
        });
    }
    let block_sum = |start: usize| -> Vec<f64> {
        let end = (start + ROW_BLOCK).min(rows);
        let mut acc = vec![0.0; cols];
        for i in start..end {
            let row = m.row(i);
            for ((a, &v), &mx) in acc.iter_mut().zip(row.iter()).zip(max.iter()) {
                if mx > f64::NEG_INFINITY {
                    *a += (v - mx).exp();
                }
            }
        }
        acc
    };
    let starts: Vec<usize> = (0..rows).step_by(ROW_BLOCK).collect();
    let partials: Vec<Vec<f64>> = if m.len() >= PARALLEL_THRESHOLD {
        starts.into_par_iter().map(block_sum).collect()
    } else {
        starts.into_iter().map(block_sum).collect()
    };
    let mut sums = vec![0.0; cols];
    for p in &partials {
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
    }
    Array1::from_shape_fn(cols, |j| {
        if max[j] == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            max[j] + sums[j].ln()
        }
    })
}

/// `KL(gamma | theta) = sum gamma (ln(gamma / theta) - 1)` with `0 ln 0 = 0`.
pub fn kl_divergence(gamma: &Coupling, theta: &Coupling) -> Result<f64> {
    if gamma.dim() != theta.dim() {
        return Err(Error::DimensionMismatch(format!(
            "KL arguments have shapes {:?} and {:?}",
            gamma.dim(),
            theta.dim()
        )));
    }
    let mut total = 0.0;
    for ((idx, &lg), &lt) in gamma
        .log_values()
        .indexed_iter()
        .zip(theta.log_values().iter())
    {
        if lg == f64::NEG_INFINITY {
            continue;
        }
        if lt == f64::NEG_INFINITY {
            return Err(Error::DivergenceUndefined {
                row: idx.0,
                col: idx.1,
            });
        }
        total += lg.exp() * (lg - lt - 1.0);
    }
    Ok(total)
}

/// Gibbs kernel `exp(-(c[i, j] + v_j) / eps)`, built directly in log form.
pub fn gibbs_kernel(cost: &CostMatrix, potential: &PotentialVector, epsilon: f64) -> Result<Coupling> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be > 0, got {epsilon}")));
    }
    let (_, cols) = cost.dim();
    if potential.len() != cols {
        return Err(Error::DimensionMismatch(format!(
            "potential has {} entries for {cols} strategies",
            potential.len()
        )));
    }
    let v = ndarray::ArrayView1::from(potential.values());
    let mut log = cost.values().clone();
    for mut row in log.axis_iter_mut(Axis(0)) {
        Zip::from(&mut row)
            .and(&v)
            .for_each(|c, &vj| *c = -(*c + vj) / epsilon);
    }
    Coupling::from_log(log)
}

/// Row sums `alpha` and column sums `nu`.
pub fn marginals(gamma: &Coupling) -> (Array1<f64>, Array1<f64>) {
    (
        gamma.log_row_sums().mapv(f64::exp),
        gamma.log_col_sums().mapv(f64::exp),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lin(m: Array2<f64>) -> Coupling {
        Coupling::from_linear(&m).unwrap()
    }

    #[test]
    fn self_divergence_is_minus_mass() {
        let g = lin(array![[0.2, 0.3], [0.1, 0.9]]);
        let kl = kl_divergence(&g, &g).unwrap();
        assert!((kl + 1.5).abs() < 1e-15);
    }

    #[test]
    fn single_entry_divergence() {
        let g = lin(array![[1.0]]);
        let t = lin(array![[std::f64::consts::E]]);
        assert!((kl_divergence(&g, &t).unwrap() + 2.0).abs() < 1e-15);
    }

    #[test]
    fn scaling_reference_shifts_divergence() {
        let g = lin(array![[0.2, 0.5], [0.7, 0.1]]);
        let t = lin(array![[0.3, 0.3], [1.0, 2.0]]);
        let t2 = lin(t.to_linear() * 2.0);
        let lhs = kl_divergence(&g, &t2).unwrap();
        let rhs = kl_divergence(&g, &t).unwrap() - 2f64.ln() * 1.5;
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn divergence_requires_absolute_continuity() {
        let g = lin(array![[0.5, 0.5]]);
        let t = lin(array![[1.0, 0.0]]);
        assert!(matches!(
            kl_divergence(&g, &t),
            Err(Error::DivergenceUndefined { row: 0, col: 1 })
        ));
        // Zero gamma where theta vanishes is fine.
        assert!(kl_divergence(&t, &t).is_ok());
    }

    #[test]
    fn divergence_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let theta = Array2::from_shape_fn((3, 4), |_| rng.gen_range(0.05..2.0));
            let gamma = Array2::from_shape_fn((3, 4), |_| rng.gen_range(0.05..2.0));
            let bound = -theta.sum();
            let kl = kl_divergence(&lin(gamma), &lin(theta.clone())).unwrap();
            assert!(kl > bound);
            let eq = kl_divergence(&lin(theta.clone()), &lin(theta)).unwrap();
            assert!((eq - bound).abs() < 1e-12);
        }
    }

    #[test]
    fn gibbs_kernel_examples() {
        let c = CostMatrix::new(Array2::zeros((2, 3))).unwrap();
        let k = gibbs_kernel(&c, &PotentialVector::zeros(3), 0.3).unwrap();
        assert!(k.log_values().iter().all(|&v| v == 0.0));

        let eps = 0.25;
        let c = CostMatrix::new(array![[eps, 0.0]]).unwrap();
        let k = gibbs_kernel(&c, &PotentialVector::zeros(2), eps).unwrap();
        assert!((k.to_linear()[[0, 0]] - (-1f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn gibbs_kernel_survives_large_costs() {
        use crate::model::{build_grid, power_cost};
        let g = build_grid(&[(0.0, 16.0)], 500, 1).unwrap();
        let c = power_cost(&g, &g, 2.0).unwrap();
        let v = PotentialVector::radial(&g, &[9.0], 4.0, 1.0).unwrap();
        let k = gibbs_kernel(&c, &v, 0.05).unwrap();
        let most_negative = k.log_values().iter().cloned().fold(f64::MAX, f64::min);
        // Worst entry: x = 16, y = 0 gives c = 256 and v = 9^4.
        let expected = -(256.0 + 9f64.powi(4)) / 0.05;
        assert!((most_negative - expected).abs() < 1e-9 * expected.abs());
        assert!(k.log_values().iter().all(|v| v.is_finite()));
        // Linear storage would have underflowed.
        assert_eq!(most_negative.exp(), 0.0);
    }

    #[test]
    fn potential_shift_keeps_row_argmax() {
        let c = CostMatrix::new(array![[0.0, 1.0, 4.0], [1.0, 0.0, 1.0]]).unwrap();
        let v = PotentialVector::new(vec![0.3, -0.2, 0.1]).unwrap();
        let v2 = PotentialVector::new(vec![5.3, 4.8, 5.1]).unwrap();
        let a = gibbs_kernel(&c, &v, 0.5).unwrap();
        let b = gibbs_kernel(&c, &v2, 0.5).unwrap();
        let diff = b.log_values() - a.log_values();
        let d0 = diff[[0, 0]];
        assert!(diff.iter().all(|d| (d - d0).abs() < 1e-12));
    }

    #[test]
    fn marginal_examples() {
        let mu = [0.2, 0.3, 0.5];
        let mut diag = Array2::zeros((3, 3));
        for k in 0..3 {
            diag[[k, k]] = mu[k];
        }
        let (a, n) = marginals(&lin(diag));
        for k in 0..3 {
            assert!((a[k] - mu[k]).abs() < 1e-16);
            assert!((n[k] - mu[k]).abs() < 1e-16);
        }
        let (a, n) = marginals(&Coupling::ones(2, 3));
        assert!(a.iter().all(|v| (v - 3.0).abs() < 1e-15));
        assert!(n.iter().all(|v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn marginals_conserve_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Array2::from_shape_fn((5, 7), |_| rng.gen_range(0.01..3.0));
        let direct = m.sum();
        let (a, n) = marginals(&lin(m));
        assert!((a.sum() - direct).abs() <= 1e-13 * direct);
        assert!((n.sum() - direct).abs() <= 1e-13 * direct);
    }

    #[test]
    fn column_sums_are_blocked_deterministically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Array2::from_shape_fn((300, 250), |_| rng.gen_range(-40.0..0.0));
        let a = log_col_sums(&m);
        let b = log_col_sums(&m);
        assert_eq!(a, b);
        let t = m.t().to_owned();
        let via_rows = log_row_sums(&t);
        for j in 0..250 {
            assert!((a[j] - via_rows[j]).abs() < 1e-12);
        }
    }
}
