use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("subcarrier map needs index {needed} but only {limit} is usable")]
    IndexOverflow { needed: usize, limit: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("decoder gain must be nonzero")]
    ZeroGain,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("client infeasible: |a| = {gain:e} < u/beta_max = {required:e}")]
    InfeasibleClient { gain: f64, required: f64 },

    #[error("layer infeasible ({reason}); violating clients {clients:?}")]
    LayerInfeasible { reason: String, clients: Vec<usize> },

    #[error("convex subproblem infeasible: {0}")]
    SubproblemInfeasible(String),

    #[error("barrier Newton solver hit {0} inner iterations without converging")]
    MaxInnerIterations(usize),

    #[error("budget exhausted: Gamma0 = {gamma0:e} <= floor reserve {reserve:e}")]
    BudgetExhausted { gamma0: f64, reserve: f64 },

    #[error("data missing: {0}")]
    DataMissing(PathBuf),

    #[error("training diverged: {0}")]
    TrainingDivergence(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
