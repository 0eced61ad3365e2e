use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("KL divergence undefined: gamma[{row}, {col}] > 0 where theta vanishes")]
    DivergenceUndefined { row: usize, col: usize },

    #[error("infeasible prox: row {row} has zero mass but must carry {target}")]
    InfeasibleProx { row: usize, target: f64 },

    #[error("root not bracketed for log-column-mass {log_mass}: {reason}")]
    RootNotBracketed { log_mass: f64, reason: String },

    #[error("Newton solve did not converge after {steps} steps (residual {residual:e})")]
    NewtonNonConvergence {
        steps: usize,
        residual: f64,
        iterate: Vec<f64>,
    },

    #[error("Sinkhorn did not converge in {iterations} iterations (row residual {row_residual:e}, column residual {col_residual:e})")]
    SinkhornNonConvergence {
        iterations: usize,
        row_residual: f64,
        col_residual: f64,
    },

    #[error("cost evaluation is singular at strategy {strategy} (nu = 0)")]
    SingularEvaluation { strategy: usize },

    #[error("Gibbs residual undefined: coupling vanishes at ({row}, {col})")]
    ResidualUndefined { row: usize, col: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("outside oracle scope: {0}")]
    OracleScope(String),

    #[error("prox '{prox}' failed in cycle {cycle}: {source}")]
    ProxFailed {
        prox: String,
        cycle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("population {population}: {source}")]
    Population {
        population: usize,
        #[source]
        source: Box<Error>,
    },
}
