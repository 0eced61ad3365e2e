//! Run configuration: JSON schema, validation, overrides and problem setup.

use std::fmt;
use std::path::PathBuf;

use cne_core::model::{
    build_grid, gaussian_mixture, interaction_kernel, power_cost, uniform_on_box, CongestionKind,
    CongestionSpec, DiscreteSpace, GaussianComponent, InteractionMatrix, PotentialVector,
    ProbabilityVector, ProblemSpec, TwoPopulationSpec,
};
use cne_core::dykstra::DykstraConfig;
use cne_core::prox::NewtonConfig;
use cne_core::schemes::{Scheme, SchemeConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub mu: MuConfig,
    pub cost: CostConfig,
    pub congestion: CongestionConfig,
    pub interaction: InteractionConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialConfig>,
    pub epsilon: f64,
    pub scheme: Scheme,
    pub tolerances: Tolerances,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub two_population: Option<TwoPopulationConfig>,
    pub output: OutputConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: DomainConfig::default(),
            mu: MuConfig::default(),
            cost: CostConfig::default(),
            congestion: CongestionConfig::default(),
            interaction: InteractionConfig::default(),
            potential: None,
            epsilon: 0.1,
            scheme: Scheme::Implicit,
            tolerances: Tolerances::default(),
            two_population: None,
            output: OutputConfig::default(),
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub dim: usize,
    pub bounds: Vec<[f64; 2]>,
    /// Points per axis.
    pub n: usize,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            bounds: vec![[0.0, 4.0]],
            n: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuKind {
    GaussianMixture,
    Uniform,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub center: Vec<f64>,
    pub stdev: f64,
    #[serde(default = "one")]
    pub mass: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MuConfig {
    pub kind: MuKind,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ComponentConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    /// Whitespace- or comma-separated weights, one per grid point.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for MuConfig {
    fn default() -> Self {
        Self {
            kind: MuKind::GaussianMixture,
            components: vec![
                ComponentConfig {
                    center: vec![1.0],
                    stdev: 0.4,
                    mass: 1.0,
                },
                ComponentConfig {
                    center: vec![3.0],
                    stdev: 0.4,
                    mass: 1.0,
                },
            ],
            lower: None,
            upper: None,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    /// `c(x, y) = |x - y|^p`.
    pub p: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { p: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CongestionName {
    None,
    Power,
    Entropy,
    LogBarrier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CongestionConfig {
    pub kind: CongestionName,
    /// Exponent `q` of `F(t) = t^q`; only read for `power`.
    pub exponent: f64,
    pub scale: f64,
    /// Evaluate `F` on densities `nu_j / h^d` and weight by the cell volume.
    pub density: bool,
}

impl Default for CongestionConfig {
    fn default() -> Self {
        Self {
            kind: CongestionName::Power,
            exponent: 2.0,
            scale: 1.0,
            density: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteractionConfig {
    /// `phi_kj = scale |y_k - y_j|^exponent`.
    pub scale: f64,
    pub exponent: f64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            scale: 1e-3,
            exponent: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub center: Vec<f64>,
    pub exponent: f64,
    #[serde(default = "one")]
    pub coeff: f64,
    /// `coeff (y - center)^exponent` without absolute value (1D, integer exponent).
    #[serde(default)]
    pub signed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub outer_tol: f64,
    pub max_outer: usize,
    pub tol_nu: f64,
    pub tol_marginal: f64,
    pub max_cycles: usize,
    pub trace_every: usize,
    pub newton_tol: f64,
    pub newton_max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let s = SchemeConfig::default();
        Self {
            outer_tol: s.outer_tol,
            max_outer: s.max_outer,
            tol_nu: s.dykstra.tol_nu,
            tol_marginal: s.dykstra.tol_marginal,
            max_cycles: s.dykstra.max_cycles,
            trace_every: s.dykstra.trace_every,
            newton_tol: s.newton.tol,
            newton_max_steps: s.newton.max_steps,
        }
    }
}

/// Second population. Absent fields copy the first population's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPopulationConfig {
    pub mu: MuConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub congestion: Option<CongestionConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialConfig>,
    /// Congestion on the total mass `nu1 + nu2`.
    pub shared_congestion: CongestionConfig,
}

impl Default for TwoPopulationConfig {
    fn default() -> Self {
        Self {
            mu: MuConfig::default(),
            cost: None,
            epsilon: None,
            congestion: None,
            interaction: None,
            potential: None,
            shared_congestion: CongestionConfig {
                exponent: 4.0,
                ..CongestionConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Coupling entries below `support_threshold * max` are not written.
    pub support_threshold: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            support_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Dotted key path, as accepted by `--override`.
    pub parameter: String,
    pub values: Vec<Value>,
}

/// One schema or semantic violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid override '{0}': expected key=value")]
    Override(String),
    #[error("{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    let mut s = format!("{} configuration error(s):", v.len());
    for x in v {
        s.push_str("\n  - ");
        s.push_str(&x.to_string());
    }
    s
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

/// Parses JSON text; empty or blank text gives the default configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_value(parse_json(text)?)
}

pub fn parse_json(text: &str) -> Result<Value, ConfigError> {
    if text.trim().is_empty() {
        return Ok(Value::Object(Default::default()));
    }
    serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

const MAX_SCHEMA_PASSES: usize = 256;

/// Deserializes and validates, collecting every violation found.
pub fn parse_value(value: Value) -> Result<RunConfig, ConfigError> {
    let mut value = value;
    let mut violations = Vec::new();
    if !value.is_object() {
        return Err(ConfigError::Invalid(vec![Violation {
            path: String::new(),
            message: "configuration must be a JSON object".into(),
        }]));
    }
    // Each failed pass reports one violation; the offending key is dropped
    // so the next pass can find the following one.
    let mut config = None;
    for _ in 0..MAX_SCHEMA_PASSES {
        match serde_path_to_error::deserialize::<_, RunConfig>(&value) {
            Ok(c) => {
                config = Some(c);
                break;
            }
            Err(err) => {
                let mut segments = path_segments(err.path());
                let message = err.inner().to_string();
                if let Some(field) = unknown_field(&message) {
                    if segments.last().map(String::as_str) != Some(field.as_str()) {
                        segments.push(field);
                    }
                }
                violations.push(Violation {
                    path: segments.join("."),
                    message,
                });
                if !remove_path(&mut value, &segments) {
                    break;
                }
            }
        }
    }
    let Some(config) = config else {
        return Err(ConfigError::Invalid(violations));
    };
    violations.extend(validate(&config));
    if violations.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

fn path_segments(path: &serde_path_to_error::Path) -> Vec<String> {
    use serde_path_to_error::Segment;
    path.iter()
        .filter_map(|s| match s {
            Segment::Map { key } => Some(key.clone()),
            Segment::Seq { index } => Some(index.to_string()),
            Segment::Enum { variant } => Some(variant.clone()),
            Segment::Unknown => None,
        })
        .collect()
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// Removes the value at `segments`; false if nothing was removed.
fn remove_path(value: &mut Value, segments: &[String]) -> bool {
    let Some((last, parents)) = segments.split_last() else {
        return false;
    };
    let mut cur = value;
    for s in parents {
        cur = match cur {
            Value::Object(m) => match m.get_mut(s) {
                Some(v) => v,
                None => return false,
            },
            Value::Array(a) => match s.parse::<usize>().ok().and_then(|i| a.get_mut(i)) {
                Some(v) => v,
                None => return false,
            },
            _ => return false,
        };
    }
    match cur {
        Value::Object(m) => m.remove(last).is_some(),
        Value::Array(a) => match last.parse::<usize>() {
            // Dropping an array element would shift indices; drop the array.
            Ok(i) if i < a.len() => {
                *cur = Value::Null;
                true
            }
            _ => false,
        },
        _ => false,
    }
}

/// Sets `key` (dotted path) to `raw`, parsed as JSON or else taken as a string.
pub fn apply_override(value: &mut Value, key: &str, raw: &str) -> Result<(), ConfigError> {
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(value, key, parsed)
}

pub fn set_path(value: &mut Value, key: &str, new: Value) -> Result<(), ConfigError> {
    let segments: Vec<&str> = key.split('.').collect();
    if key.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::Override(key.to_string()));
    }
    let mut cur = value;
    for (k, s) in segments.iter().enumerate() {
        let last = k + 1 == segments.len();
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        cur = match cur {
            Value::Object(m) => {
                if last {
                    m.insert(s.to_string(), new);
                    return Ok(());
                }
                m.entry(s.to_string()).or_insert(Value::Null)
            }
            Value::Array(a) => {
                let i: usize = s.parse().map_err(|_| ConfigError::Override(key.to_string()))?;
                let slot = a.get_mut(i).ok_or_else(|| ConfigError::Override(key.to_string()))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => return Err(ConfigError::Override(key.to_string())),
        };
    }
    unreachable!("loop returns on the last segment")
}

/// Applies `key=value` overrides in order.
pub fn apply_overrides(value: &mut Value, overrides: &[String]) -> Result<(), ConfigError> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(o.clone()))?;
        apply_override(value, k.trim(), v.trim())?;
    }
    Ok(())
}

fn push(v: &mut Vec<Violation>, path: &str, message: impl Into<String>) {
    v.push(Violation {
        path: path.to_string(),
        message: message.into(),
    });
}

fn positive(v: &mut Vec<Violation>, path: &str, x: f64) {
    if !(x > 0.0) || !x.is_finite() {
        push(v, path, format!("must be a finite number > 0, got {x}"));
    }
}

fn validate_mu(v: &mut Vec<Violation>, prefix: &str, mu: &MuConfig, dim: usize) {
    match mu.kind {
        MuKind::GaussianMixture => {
            if mu.components.is_empty() {
                push(v, &format!("{prefix}.components"), "a Gaussian mixture needs at least one component");
            }
            for (k, c) in mu.components.iter().enumerate() {
                let p = format!("{prefix}.components.{k}");
                if c.center.len() != dim {
                    push(v, &format!("{p}.center"), format!("needs {dim} coordinate(s), got {}", c.center.len()));
                }
                positive(v, &format!("{p}.stdev"), c.stdev);
                if !(c.mass >= 0.0) || !c.mass.is_finite() {
                    push(v, &format!("{p}.mass"), format!("must be finite and >= 0, got {}", c.mass));
                }
            }
        }
        MuKind::Uniform => match (&mu.lower, &mu.upper) {
            (Some(lo), Some(hi)) => {
                if lo.len() != dim || hi.len() != dim {
                    push(v, prefix, format!("lower and upper need {dim} coordinate(s)"));
                } else if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    push(v, prefix, "lower must be below upper on every axis");
                }
            }
            _ => push(v, prefix, "uniform mu needs lower and upper"),
        },
        MuKind::File => {
            if mu.path.is_none() {
                push(v, &format!("{prefix}.path"), "file mu needs a path");
            }
        }
    }
}

fn validate_congestion(v: &mut Vec<Violation>, path: &str, c: &CongestionConfig) {
    if c.kind == CongestionName::Power && !(c.exponent > 1.0 && c.exponent.is_finite()) {
        push(v, &format!("{path}.exponent"), format!("power congestion needs exponent > 1, got {}", c.exponent));
    }
    if !(c.scale >= 0.0) || !c.scale.is_finite() {
        push(v, &format!("{path}.scale"), format!("must be finite and >= 0, got {}", c.scale));
    }
}

fn validate_potential(v: &mut Vec<Violation>, path: &str, p: &PotentialConfig, dim: usize) {
    if p.center.len() != dim {
        push(v, &format!("{path}.center"), format!("needs {dim} coordinate(s), got {}", p.center.len()));
    }
    if !(p.exponent >= 0.0) || !p.exponent.is_finite() {
        push(v, &format!("{path}.exponent"), "must be finite and >= 0");
    }
    if p.signed && (dim != 1 || p.exponent.fract() != 0.0) {
        push(v, &format!("{path}.signed"), "signed potentials need dim 1 and an integer exponent");
    }
}

fn validate_interaction(v: &mut Vec<Violation>, path: &str, i: &InteractionConfig) {
    if !i.scale.is_finite() {
        push(v, &format!("{path}.scale"), "must be finite");
    }
    if !(i.exponent >= 0.0) || !i.exponent.is_finite() {
        push(v, &format!("{path}.exponent"), "must be finite and >= 0");
    }
}

/// Couplings hold `points^2` entries, so the grid is capped.
pub const MAX_GRID_POINTS: usize = 10_000;

/// Semantic checks beyond the JSON schema.
pub fn validate(c: &RunConfig) -> Vec<Violation> {
    let mut v = Vec::new();
    let dim = c.domain.dim;
    if !(dim == 1 || dim == 2) {
        push(&mut v, "domain.dim", format!("must be 1 or 2, got {dim}"));
    }
    if c.domain.bounds.len() != dim {
        push(&mut v, "domain.bounds", format!("needs {dim} interval(s), got {}", c.domain.bounds.len()));
    }
    for (k, [lo, hi]) in c.domain.bounds.iter().enumerate() {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            push(&mut v, &format!("domain.bounds.{k}"), format!("needs finite lower < upper, got [{lo}, {hi}]"));
        }
    }
    if c.domain.n < 2 {
        push(&mut v, "domain.n", format!("must be at least 2, got {}", c.domain.n));
    }
    let points = (c.domain.n as u128).saturating_pow(dim.min(2) as u32);
    if points > MAX_GRID_POINTS as u128 {
        push(
            &mut v,
            "domain.n",
            format!("grid has {points} points; at most {MAX_GRID_POINTS} are supported"),
        );
    }
    validate_mu(&mut v, "mu", &c.mu, dim);
    positive(&mut v, "cost.p", c.cost.p);
    validate_congestion(&mut v, "congestion", &c.congestion);
    validate_interaction(&mut v, "interaction", &c.interaction);
    if let Some(p) = &c.potential {
        validate_potential(&mut v, "potential", p, dim);
    }
    positive(&mut v, "epsilon", c.epsilon);

    let t = &c.tolerances;
    positive(&mut v, "tolerances.outer_tol", t.outer_tol);
    positive(&mut v, "tolerances.tol_nu", t.tol_nu);
    positive(&mut v, "tolerances.tol_marginal", t.tol_marginal);
    positive(&mut v, "tolerances.newton_tol", t.newton_tol);
    for (name, x) in [
        ("max_outer", t.max_outer),
        ("max_cycles", t.max_cycles),
        ("trace_every", t.trace_every),
        ("newton_max_steps", t.newton_max_steps),
    ] {
        if x == 0 {
            push(&mut v, &format!("tolerances.{name}"), "must be >= 1");
        }
    }
    if c.scheme == Scheme::Implicit && c.congestion.kind == CongestionName::LogBarrier {
        push(&mut v, "scheme", "log_barrier congestion needs the semi_implicit scheme");
    }

    if let Some(tp) = &c.two_population {
        validate_mu(&mut v, "two_population.mu", &tp.mu, dim);
        if let Some(cost) = &tp.cost {
            positive(&mut v, "two_population.cost.p", cost.p);
        }
        if let Some(e) = tp.epsilon {
            positive(&mut v, "two_population.epsilon", e);
        }
        if let Some(cg) = &tp.congestion {
            validate_congestion(&mut v, "two_population.congestion", cg);
        }
        if let Some(i) = &tp.interaction {
            validate_interaction(&mut v, "two_population.interaction", i);
        }
        if let Some(p) = &tp.potential {
            validate_potential(&mut v, "two_population.potential", p, dim);
        }
        validate_congestion(&mut v, "two_population.shared_congestion", &tp.shared_congestion);
    }

    positive(&mut v, "output.support_threshold", c.output.support_threshold);
    if let Some(s) = &c.sweep {
        if s.values.is_empty() {
            push(&mut v, "sweep.values", "must list at least one value");
        }
        if s.parameter.is_empty() || s.parameter.starts_with("sweep") {
            push(&mut v, "sweep.parameter", "must name a configuration key outside `sweep`");
        }
    }
    v
}

impl RunConfig {
    pub fn scheme_config(&self) -> SchemeConfig {
        let t = &self.tolerances;
        SchemeConfig {
            scheme: self.scheme,
            outer_tol: t.outer_tol,
            max_outer: t.max_outer,
            dykstra: DykstraConfig {
                tol_nu: t.tol_nu,
                tol_marginal: t.tol_marginal,
                max_cycles: t.max_cycles,
                trace_every: t.trace_every,
            },
            newton: NewtonConfig {
                tol: t.newton_tol,
                max_steps: t.newton_max_steps,
            },
        }
    }

    /// The configuration with one sweep value applied and the sweep removed.
    pub fn with_sweep_value(&self, key: &str, value: &Value) -> Result<RunConfig, ConfigError> {
        let mut raw = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut raw {
            m.remove("sweep");
        }
        set_path(&mut raw, key, value.clone())?;
        parse_value(raw)
    }
}

/// A solvable problem built from a configuration.
#[derive(Debug, Clone)]
pub enum Problem {
    Single(ProblemSpec),
    Two(TwoPopulationSpec),
}

impl Problem {
    pub fn space(&self) -> &DiscreteSpace {
        match self {
            Problem::Single(p) => &p.y,
            Problem::Two(s) => &s.pop1.y,
        }
    }
}

fn grid(c: &RunConfig) -> anyhow::Result<DiscreteSpace> {
    let bounds: Vec<(f64, f64)> = c.domain.bounds.iter().map(|b| (b[0], b[1])).collect();
    Ok(build_grid(&bounds, c.domain.n, c.domain.dim)?)
}

fn build_mu(mu: &MuConfig, space: &DiscreteSpace) -> anyhow::Result<ProbabilityVector> {
    Ok(match mu.kind {
        MuKind::GaussianMixture => {
            let comps: Vec<GaussianComponent> = mu
                .components
                .iter()
                .map(|c| GaussianComponent {
                    center: c.center.clone(),
                    stdev: c.stdev,
                    mass: c.mass,
                })
                .collect();
            gaussian_mixture(space, &comps)?
        }
        MuKind::Uniform => uniform_on_box(
            space,
            mu.lower.as_deref().unwrap_or_default(),
            mu.upper.as_deref().unwrap_or_default(),
        )?,
        MuKind::File => {
            let path = mu.path.as_ref().expect("validated");
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("cannot read mu file {}: {e}", path.display()))?;
            let raw: Vec<f64> = text
                .split(|ch: char| ch.is_whitespace() || ch == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| anyhow::anyhow!("mu file {}: {e}", path.display()))?;
            if raw.len() != space.len() {
                anyhow::bail!("mu file {} has {} weights for {} grid points", path.display(), raw.len(), space.len());
            }
            ProbabilityVector::normalized(raw)?
        }
    })
}

fn build_congestion(c: &CongestionConfig, space: &DiscreteSpace) -> anyhow::Result<CongestionSpec> {
    let kind = match c.kind {
        CongestionName::None => CongestionKind::None,
        CongestionName::Power => CongestionKind::Power { q: c.exponent },
        CongestionName::Entropy => CongestionKind::Entropy,
        CongestionName::LogBarrier => CongestionKind::LogBarrier,
    };
    let w = if c.density {
        space.cell_volume().unwrap_or(1.0)
    } else {
        1.0
    };
    Ok(CongestionSpec::new(kind, c.scale, w)?)
}

fn build_interaction(i: &InteractionConfig, space: &DiscreteSpace) -> anyhow::Result<InteractionMatrix> {
    if i.scale == 0.0 {
        Ok(InteractionMatrix::zeros(space.len()))
    } else {
        Ok(interaction_kernel(space, i.scale, i.exponent)?)
    }
}

fn build_potential(p: Option<&PotentialConfig>, space: &DiscreteSpace) -> anyhow::Result<PotentialVector> {
    Ok(match p {
        None => PotentialVector::zeros(space.len()),
        Some(p) if p.signed => PotentialVector::signed(space, p.center[0], p.exponent, p.coeff)?,
        Some(p) => PotentialVector::radial(space, &p.center, p.exponent, p.coeff)?,
    })
}

/// Builds the single- or two-population problem described by `c`.
pub fn build_problem(c: &RunConfig) -> anyhow::Result<Problem> {
    let space = grid(c)?;
    let pop1 = ProblemSpec::new(
        space.clone(),
        space.clone(),
        build_mu(&c.mu, &space)?,
        power_cost(&space, &space, c.cost.p)?,
        build_congestion(&c.congestion, &space)?,
        build_interaction(&c.interaction, &space)?,
        build_potential(c.potential.as_ref(), &space)?,
        c.epsilon,
    )?;
    let Some(tp) = &c.two_population else {
        return Ok(Problem::Single(pop1));
    };
    let cost = match &tp.cost {
        Some(cc) => power_cost(&space, &space, cc.p)?,
        None => pop1.cost.clone(),
    };
    let congestion = match &tp.congestion {
        Some(cg) => build_congestion(cg, &space)?,
        None => pop1.congestion,
    };
    let interaction = match &tp.interaction {
        Some(i) => build_interaction(i, &space)?,
        None => pop1.interaction.clone(),
    };
    let potential = match &tp.potential {
        Some(p) => build_potential(Some(p), &space)?,
        None => pop1.potential.clone(),
    };
    let pop2 = ProblemSpec::new(
        space.clone(),
        space.clone(),
        build_mu(&tp.mu, &space)?,
        cost,
        congestion,
        interaction,
        potential,
        tp.epsilon.unwrap_or(c.epsilon),
    )?;
    let shared = build_congestion(&tp.shared_congestion, &space)?;
    Ok(Problem::Two(TwoPopulationSpec::new(pop1, pop2, shared)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
        assert_eq!(parse_config("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.potential = Some(PotentialConfig {
            center: vec![2.0],
            exponent: 4.0,
            coeff: 0.5,
            signed: false,
        });
        c.two_population = Some(TwoPopulationConfig {
            epsilon: Some(0.3),
            ..Default::default()
        });
        c.sweep = Some(SweepConfig {
            parameter: "cost.p".into(),
            values: vec![1.into(), 2.5.into()],
        });
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
    }

    #[test]
    fn negative_epsilon_is_named() {
        let err = parse_config(r#"{"epsilon": -1}"#).unwrap_err();
        assert!(err.violations().iter().any(|v| v.path == "epsilon"));
    }

    #[test]
    fn all_violations_are_collected() {
        let err = parse_config(
            r#"{"epsilon": -1, "bogus": 1, "domain": {"n": "many", "extra": true}, "cost": {"p": 0}}"#,
        )
        .unwrap_err();
        let paths: Vec<&str> = err.violations().iter().map(|v| v.path.as_str()).collect();
        for p in ["bogus", "domain.n", "domain.extra", "epsilon", "cost.p"] {
            assert!(paths.contains(&p), "missing {p} in {paths:?}");
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_config("{\n  \"epsilon\": 0.1,\n  oops\n}") {
            Err(ConfigError::Syntax { line, column, .. }) => {
                assert_eq!(line, 3);
                assert!(column >= 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overrides_use_dotted_paths() {
        let mut v = parse_json("{}").unwrap();
        apply_overrides(
            &mut v,
            &["cost.p=3".into(), "scheme=semi_implicit".into(), "domain.bounds=[[0,2]]".into()],
        )
        .unwrap();
        let c = parse_value(v).unwrap();
        assert_eq!(c.cost.p, 3.0);
        assert_eq!(c.scheme, Scheme::SemiImplicit);
        assert_eq!(c.domain.bounds, vec![[0.0, 2.0]]);
        let mut v = parse_json("{}").unwrap();
        assert!(apply_overrides(&mut v, &["noequals".into()]).is_err());
    }

    #[test]
    fn defaults_build_a_convex_demo() {
        let Problem::Single(p) = build_problem(&RunConfig::default()).unwrap() else {
            panic!("expected one population");
        };
        assert_eq!(p.n_strategies(), 40);
        assert!(p.interaction.satisfies_norm_condition());
        assert!(p.congestion.admits_strongly_convex_split());
    }
}
