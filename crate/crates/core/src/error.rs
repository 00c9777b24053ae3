use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the sparse-coding toolkit.
#[derive(Debug, Error)]
pub enum DscError {
    #[error("column {0} has (near) zero norm")]
    ZeroColumn(usize),
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("layer index out of range: j={j}, j0={j0}, depth={depth}")]
    IndexOutOfRange { j: usize, j0: usize, depth: usize },
    #[error("exact-chain construction cannot meet budget at layer {layer}: {reason}")]
    InfeasibleBudget { layer: usize, reason: String },
    #[error("mutual coherence needs at least two columns")]
    TooFewColumns,
    #[error("linear program infeasible (internal error for normalized dictionaries)")]
    LpInfeasible,
    #[error("linear program unbounded")]
    LpUnbounded,
    #[error("linear program failed numerically: {0}")]
    LpNumericalFailure(String),
    #[error("ISTA objective increased for 3 consecutive iterations; step too large")]
    DivergingStep,
    #[error("observation is not in the range of the dictionary (residual {0:e})")]
    Infeasible(f64),
    #[error("combinatorial budget exceeded: {0} candidate supports")]
    BudgetExceeded(u128),
    #[error("no support of size <= {0} attains the tolerance")]
    NoSolution(usize),
    #[error("back-substituted codes violate the given supports by {0:e}")]
    InconsistentSupports(f64),
    #[error("sparsity {s} violates the support-recovery bound {bound}")]
    SparsityTooHigh { s: usize, bound: f64 },
    #[error("envelope rate {0} is not contractive (must be < 1)")]
    RateNotContractive(f64),
    #[error("bound undefined: L^m = {0} >= 1")]
    UndefinedForL(f64),
    #[error("instance carries no codes to check")]
    MissingCodes,
    #[error("fit needs at least 3 usable points, got {0}")]
    TooFewPoints(usize),
    #[error("infeasible layer {0}: 1 - (2 lambda - 1) mu <= 0")]
    InfeasibleLayer(usize),
    #[error("bound undefined: 1 - (2 lambda - 1) mu = {0} <= 0")]
    InfeasibleCondition(f64),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("config error at {field}: {message}")]
    Config { field: String, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DscError>;
