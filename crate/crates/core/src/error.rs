//! Error type shared by every module of the toolkit.

use thiserror::Error;

/// Failures surfaced by scenario generation, precoding, optimization and experiments.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),

    #[error("nonpositive estimator denominator at AP {ap}, user {user}")]
    DegenerateEstimator { ap: usize, user: usize },

    #[error("Gram matrix at AP {ap} is ill-conditioned (condition number {cond:e})")]
    SingularGram { ap: usize, cond: f64 },

    #[error("full zero-forcing needs M > K, got M = {m}, K = {k}")]
    InsufficientAntennas { m: usize, k: usize },

    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),

    #[error("invalid power matrix: {0}")]
    InvalidPower(String),

    #[error("eavesdropper gain must be positive at every AP")]
    NonPositiveEavesdropperGain,

    #[error("power optimization infeasible: {0}")]
    Infeasible(String),

    #[error("conic solver failure: {0}")]
    SolverFailure(String),

    #[error("several users flagged as attacked: {0:?}")]
    Ambiguous(Vec<usize>),

    #[error("invalid detection config: {0}")]
    InvalidDetectionConfig(String),

    #[error("coherence interval must be positive")]
    NonPositiveCoherence,

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
