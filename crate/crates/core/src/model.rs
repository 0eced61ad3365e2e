//! Problem data: type and strategy spaces, measures, costs and energies.
//!
//! Two-dimensional grids are stored in row-major order: point `k = a * n + b`
//! has coordinates `(t_a, s_b)` where `t` discretizes the first axis and `s`
//! the second. Every matrix indexed by points inherits this ordering.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum(weights) - 1|` for a [`ProbabilityVector`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A finite set of distinct points in R^1 or R^2.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpace {
    points: Array2<f64>,
    cell_volume: Option<f64>,
}

impl DiscreteSpace {
    /// Builds a space from an `n x dim` coordinate table.
    pub fn new(points: Array2<f64>) -> Result<Self> {
        let (n, dim) = points.dim();
        if n == 0 {
            return Err(Error::InvalidConfig("a space needs at least one point".into()));
        }
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidConfig(format!(
                "only dimensions 1 and 2 are supported, got {dim}"
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("point coordinates must be finite".into()));
        }
        // Sorting lexicographically turns the distinctness check into a
        // neighbour comparison.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            points
                .row(a)
                .iter()
                .zip(points.row(b).iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for w in order.windows(2) {
            if points.row(w[0]) == points.row(w[1]) {
                return Err(Error::InvalidConfig(format!(
                    "points {} and {} coincide",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self {
            points,
            cell_volume: None,
        })
    }

    pub fn from_1d(coords: &[f64]) -> Result<Self> {
        let points = Array2::from_shape_vec((coords.len(), 1), coords.to_vec())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, k: usize) -> ArrayView1<'_, f64> {
        self.points.row(k)
    }

    /// Volume of one grid cell (`h^dim`) for spaces produced by [`build_grid`].
    pub fn cell_volume(&self) -> Option<f64> {
        self.cell_volume
    }
}

/// Uniform tensor grid including both endpoints of each axis.
pub fn build_grid(bounds: &[(f64, f64)], n: usize, dim: usize) -> Result<DiscreteSpace> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "grid needs at least 2 points per axis, got {n}"
        )));
    }
    if bounds.len() != dim {
        return Err(Error::InvalidConfig(format!(
            "expected {dim} axis bounds, got {}",
            bounds.len()
        )));
    }
    for (axis, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidConfig(format!(
                "axis {axis}: bounds [{lo}, {hi}] are inverted or degenerate"
            )));
        }
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let h = (hi - lo) / (n - 1) as f64;
        (0..n)
            .map(|k| if k == n - 1 { hi } else { lo + h * k as f64 })
            .collect()
    };
    let points = match dim {
        1 => {
            let t = axis(bounds[0]);
            Array2::from_shape_vec((n, 1), t).expect("shape")
        }
        2 => {
            let t = axis(bounds[0]);
            let s = axis(bounds[1]);
            let mut pts = Array2::zeros((n * n, 2));
            for a in 0..n {
                for b in 0..n {
                    pts[[a * n + b, 0]] = t[a];
                    pts[[a * n + b, 1]] = s[b];
                }
            }
            pts
        }
        _ => {
            return Err(Error::InvalidConfig(format!(
                "only dimensions 1 and 2 are supported, got {dim}"
            )))
        }
    };
    let cell_volume = bounds
        .iter()
        .map(|&(lo, hi)| (hi - lo) / (n - 1) as f64)
        .product();
    Ok(DiscreteSpace {
        points,
        cell_volume: Some(cell_volume),
    })
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector {
    weights: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::DegenerateMeasure("empty weight vector".into()));
        }
        if let Some((k, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::DegenerateMeasure(format!(
                "weight {k} is {w}; weights must be finite and nonnegative"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::DegenerateMeasure(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self { weights })
    }

    /// Renormalizes nonnegative raw masses.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::DegenerateMeasure(
                "raw masses must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateMeasure(format!(
                "raw masses have total {total}"
            )));
        }
        Self::new(raw.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::DegenerateMeasure("empty support".into()));
        }
        Self::normalized(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn to_array(&self) -> Array1<f64> {
        Array1::from(self.weights.clone())
    }
}

/// One Gaussian bump of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub center: Vec<f64>,
    pub stdev: f64,
    pub mass: f64,
}

/// Samples a Gaussian mixture density at the points of `space` and
/// renormalizes the samples to a probability vector.
pub fn gaussian_mixture(
    space: &DiscreteSpace,
    components: &[GaussianComponent],
) -> Result<ProbabilityVector> {
    if components.is_empty() {
        return Err(Error::InvalidConfig("mixture needs at least one component".into()));
    }
    for (k, c) in components.iter().enumerate() {
        if !(c.stdev > 0.0) {
            return Err(Error::InvalidConfig(format!("component {k}: stdev must be > 0")));
        }
        if !(c.mass > 0.0) {
            return Err(Error::InvalidConfig(format!("component {k}: mass must be > 0")));
        }
        if c.center.len() != space.dim() {
            return Err(Error::DimensionMismatch(format!(
                "component {k}: center has dimension {}, space has {}",
                c.center.len(),
                space.dim()
            )));
        }
    }
    let raw: Vec<f64> = space
        .points()
        .rows()
        .into_iter()
        .map(|x| {
            components
                .iter()
                .map(|c| {
                    let d2: f64 = x
                        .iter()
                        .zip(&c.center)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    c.mass * (-d2 / (2.0 * c.stdev * c.stdev)).exp()
                })
                .sum()
        })
        .collect();
    if raw.iter().all(|&w| w == 0.0) {
        return Err(Error::DegenerateMeasure(
            "mixture evaluates to zero at every grid point".into(),
        ));
    }
    ProbabilityVector::normalized(raw)
}

/// Equal weights on the points inside the box `[lower, upper]`, zero elsewhere.
pub fn uniform_on_box(
    space: &DiscreteSpace,
    lower: &[f64],
    upper: &[f64],
) -> Result<ProbabilityVector> {
    if lower.len() != space.dim() || upper.len() != space.dim() {
        return Err(Error::DimensionMismatch(
            "uniform box bounds must match the space dimension".into(),
        ));
    }
    let raw: Vec<f64> = space
        .points()
        .rows()
        .into_iter()
        .map(|x| {
            let inside = x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi);
            if inside {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    if raw.iter().all(|&w| w == 0.0) {
        return Err(Error::DegenerateMeasure("uniform box contains no grid point".into()));
    }
    ProbabilityVector::normalized(raw)
}

/// Transport cost matrix `c[i, j]`, types by rows and strategies by columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("cost[{i}, {j}] = {v} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

fn distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `c[i, j] = |x_i - y_j|^p` with the Euclidean norm.
pub fn power_cost(x: &DiscreteSpace, y: &DiscreteSpace, p: f64) -> Result<CostMatrix> {
    if !(p > 0.0) {
        return Err(Error::InvalidConfig(format!("cost exponent must be > 0, got {p}")));
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "type space has dimension {}, strategy space {}",
            x.dim(),
            y.dim()
        )));
    }
    let values = Array2::from_shape_fn((x.len(), y.len()), |(i, j)| {
        distance(x.point(i), y.point(j)).powf(p)
    });
    CostMatrix::new(values)
}

/// Symmetric strategy-pair interaction weights.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    values: Array2<f64>,
}

impl InteractionMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(Error::DimensionMismatch(format!(
                "interaction matrix must be square, got {r}x{c}"
            )));
        }
        for k in 0..r {
            for j in 0..k {
                if values[[k, j]] != values[[j, k]] {
                    return Err(Error::InvalidConfig(format!(
                        "interaction matrix is not symmetric at ({k}, {j})"
                    )));
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("interaction entries must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: Array2::zeros((n, n)),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Sum of squared entries; below one the quadratic energy plus a
    /// 1-strongly convex congestion is convex.
    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn satisfies_norm_condition(&self) -> bool {
        self.frobenius_sq() < 1.0
    }

    /// `(phi * nu)_j = sum_k phi[k, j] nu_k`.
    pub fn apply(&self, nu: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for (k, &nk) in nu.iter().enumerate() {
            if nk == 0.0 {
                continue;
            }
            let row = self.values.row(k);
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o += v * nk;
            }
        }
        out
    }

    /// `sum_{k,j} phi[k, j] nu_k nu_j`.
    pub fn quadratic_form(&self, nu: &[f64]) -> f64 {
        self.apply(nu).iter().zip(nu).map(|(a, b)| a * b).sum()
    }
}

/// `phi[k, j] = scale * |y_k - y_j|^q`.
pub fn interaction_kernel(y: &DiscreteSpace, scale: f64, q: f64) -> Result<InteractionMatrix> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "interaction scale must be >= 0, got {scale}"
        )));
    }
    if !(q > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "interaction exponent must be > 0, got {q}"
        )));
    }
    let n = y.len();
    let mut values = Array2::zeros((n, n));
    if scale > 0.0 {
        for k in 0..n {
            for j in 0..k {
                let v = scale * distance(y.point(k), y.point(j)).powf(q);
                values[[k, j]] = v;
                values[[j, k]] = v;
            }
        }
    }
    InteractionMatrix::new(values)
}

/// Shape of the congestion primitive `F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CongestionKind {
    None,
    /// `F(t) = t^q`, `q > 1`.
    Power { q: f64 },
    /// `F(t) = t ln t - t`.
    Entropy,
    /// `F(t) = ln t`; its derivative decreases, so it is not a congestion in
    /// the monotone sense and only the semi-implicit path accepts it.
    LogBarrier,
}

/// Congestion energy `sum_j F_w(nu_j)` with `F_w(t) = scale * w * F(t / w)`.
///
/// `w` is the cell volume when the congestion acts on densities
/// (`nu_j / w`) rather than on raw point masses; `w = 1` recovers `F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionSpec {
    pub kind: CongestionKind,
    pub scale: f64,
    pub cell_volume: f64,
}

impl CongestionSpec {
    pub fn none() -> Self {
        Self {
            kind: CongestionKind::None,
            scale: 1.0,
            cell_volume: 1.0,
        }
    }

    pub fn power(q: f64) -> Result<Self> {
        Self::new(CongestionKind::Power { q }, 1.0, 1.0)
    }

    pub fn new(kind: CongestionKind, scale: f64, cell_volume: f64) -> Result<Self> {
        if let CongestionKind::Power { q } = kind {
            if !(q > 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "power congestion exponent must be > 1, got {q}"
                )));
            }
        }
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "congestion scale must be >= 0, got {scale}"
            )));
        }
        if !(cell_volume > 0.0) || !cell_volume.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "congestion cell volume must be > 0, got {cell_volume}"
            )));
        }
        Ok(Self {
            kind,
            scale,
            cell_volume,
        })
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        self.scale = scale;
        Self::new(self.kind, self.scale, self.cell_volume)
    }

    pub fn with_cell_volume(mut self, w: f64) -> Result<Self> {
        self.cell_volume = w;
        Self::new(self.kind, self.scale, self.cell_volume)
    }

    pub fn is_none(&self) -> bool {
        matches!(self.kind, CongestionKind::None) || self.scale == 0.0
    }

    /// Whether `f` is nondecreasing on `(0, inf)`.
    pub fn has_monotone_derivative(&self) -> bool {
        !matches!(self.kind, CongestionKind::LogBarrier) || self.scale == 0.0
    }

    /// Whether `f` blows up at zero.
    pub fn singular_at_zero(&self) -> bool {
        matches!(
            self.kind,
            CongestionKind::Entropy | CongestionKind::LogBarrier
        ) && self.scale > 0.0
    }

    /// `F_w(t)`.
    pub fn primitive(&self, t: f64) -> f64 {
        let w = self.cell_volume;
        let r = t / w;
        let base = match self.kind {
            CongestionKind::None => 0.0,
            CongestionKind::Power { q } => r.powf(q),
            CongestionKind::Entropy => {
                if r == 0.0 {
                    0.0
                } else {
                    r * r.ln() - r
                }
            }
            CongestionKind::LogBarrier => r.ln(),
        };
        if self.scale == 0.0 {
            0.0
        } else {
            self.scale * w * base
        }
    }

    /// `f_w(t) = F_w'(t)`.
    pub fn derivative(&self, t: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        let r = t / self.cell_volume;
        let base = match self.kind {
            CongestionKind::None => 0.0,
            CongestionKind::Power { q } => q * r.powf(q - 1.0),
            CongestionKind::Entropy => r.ln(),
            CongestionKind::LogBarrier => 1.0 / r,
        };
        self.scale * base
    }

    /// `f_w'(t)`.
    pub fn second_derivative(&self, t: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        let w = self.cell_volume;
        let r = t / w;
        let base = match self.kind {
            CongestionKind::None => 0.0,
            CongestionKind::Power { q } => q * (q - 1.0) * r.powf(q - 2.0),
            CongestionKind::Entropy => 1.0 / r,
            CongestionKind::LogBarrier => -1.0 / (r * r),
        };
        self.scale * base / w
    }

    /// `f_w(e^u)`, evaluated without forming `e^u`.
    pub fn derivative_at_log(&self, u: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        let lr = u - self.cell_volume.ln();
        let base = match self.kind {
            CongestionKind::None => 0.0,
            CongestionKind::Power { q } => q * ((q - 1.0) * lr).exp(),
            CongestionKind::Entropy => lr,
            CongestionKind::LogBarrier => (-lr).exp(),
        };
        self.scale * base
    }

    /// `t f_w'(t)` at `t = e^u`.
    pub fn elasticity_at_log(&self, u: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        let lr = u - self.cell_volume.ln();
        let base = match self.kind {
            CongestionKind::None => 0.0,
            CongestionKind::Power { q } => q * (q - 1.0) * ((q - 1.0) * lr).exp(),
            CongestionKind::Entropy => 1.0,
            CongestionKind::LogBarrier => -(-lr).exp(),
        };
        self.scale * base
    }

    /// Samples `H(t) = F_w(t) - t^2 / 2` on `[0, 1]` and reports whether its
    /// second derivative is nonnegative everywhere on the sample.
    pub fn admits_strongly_convex_split(&self) -> bool {
        const SAMPLES: usize = 2001;
        (1..SAMPLES).all(|k| {
            let t = k as f64 / (SAMPLES - 1) as f64;
            self.second_derivative(t) - 1.0 >= -1e-12
        })
    }
}

/// Per-strategy linear potential `v_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialVector {
    values: Vec<f64>,
}

impl PotentialVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("potential entries must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    /// `coeff * |y - center|^exponent`.
    pub fn radial(y: &DiscreteSpace, center: &[f64], exponent: f64, coeff: f64) -> Result<Self> {
        if center.len() != y.dim() {
            return Err(Error::DimensionMismatch(format!(
                "potential center has dimension {}, space has {}",
                center.len(),
                y.dim()
            )));
        }
        let c = ArrayView1::from(center);
        Self::new(
            (0..y.len())
                .map(|j| coeff * distance(y.point(j), c).powf(exponent))
                .collect(),
        )
    }

    /// `coeff * (y - center)^exponent` in one dimension; the exponent must be
    /// an integer so negative bases stay real.
    pub fn signed(y: &DiscreteSpace, center: f64, exponent: f64, coeff: f64) -> Result<Self> {
        if y.dim() != 1 {
            return Err(Error::InvalidConfig(
                "signed potentials are only defined in one dimension".into(),
            ));
        }
        if exponent.fract() != 0.0 || exponent.abs() > i32::MAX as f64 {
            return Err(Error::InvalidConfig(format!(
                "signed potential needs an integer exponent, got {exponent}"
            )));
        }
        let e = exponent as i32;
        Self::new(
            (0..y.len())
                .map(|j| coeff * (y.point(j)[0] - center).powi(e))
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Complete single-population problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub x: DiscreteSpace,
    pub y: DiscreteSpace,
    pub mu: ProbabilityVector,
    pub cost: CostMatrix,
    pub congestion: CongestionSpec,
    pub interaction: InteractionMatrix,
    pub potential: PotentialVector,
    pub epsilon: f64,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: DiscreteSpace,
        y: DiscreteSpace,
        mu: ProbabilityVector,
        cost: CostMatrix,
        congestion: CongestionSpec,
        interaction: InteractionMatrix,
        potential: PotentialVector,
        epsilon: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be > 0, got {epsilon}")));
        }
        if mu.len() != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "mu has {} weights for {} types",
                mu.len(),
                x.len()
            )));
        }
        if cost.dim() != (x.len(), y.len()) {
            return Err(Error::DimensionMismatch(format!(
                "cost is {:?}, expected ({}, {})",
                cost.dim(),
                x.len(),
                y.len()
            )));
        }
        if interaction.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "interaction is {0}x{0}, expected {1}x{1}",
                interaction.len(),
                y.len()
            )));
        }
        if potential.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "potential has {} entries for {} strategies",
                potential.len(),
                y.len()
            )));
        }
        Ok(Self {
            x,
            y,
            mu,
            cost,
            congestion,
            interaction,
            potential,
            epsilon,
        })
    }

    pub fn n_types(&self) -> usize {
        self.x.len()
    }

    pub fn n_strategies(&self) -> usize {
        self.y.len()
    }

    /// `E(nu) = sum F_j(nu_j) + 1/2 sum phi nu nu + sum v_j nu_j`.
    pub fn energy(&self, nu: &[f64]) -> f64 {
        let congestion: f64 = nu.iter().map(|&t| self.congestion.primitive(t)).sum();
        let potential: f64 = nu.iter().zip(self.potential.values()).map(|(a, b)| a * b).sum();
        congestion + 0.5 * self.interaction.quadratic_form(nu) + potential
    }
}

/// Two populations sharing the strategy space and a total congestion.
#[derive(Debug, Clone)]
pub struct TwoPopulationSpec {
    pub pop1: ProblemSpec,
    pub pop2: ProblemSpec,
    pub shared_congestion: CongestionSpec,
}

impl TwoPopulationSpec {
    pub fn new(
        pop1: ProblemSpec,
        pop2: ProblemSpec,
        shared_congestion: CongestionSpec,
    ) -> Result<Self> {
        if pop1.y != pop2.y {
            return Err(Error::DimensionMismatch(
                "both populations must share the same strategy points".into(),
            ));
        }
        Ok(Self {
            pop1,
            pop2,
            shared_congestion,
        })
    }

    /// The same spec with population labels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            pop1: self.pop2.clone(),
            pop2: self.pop1.clone(),
            shared_congestion: self.shared_congestion,
        }
    }
}
