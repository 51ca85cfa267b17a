use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("sampling step too large: eta = eps / sigma_L^2 = {eta} exceeds 1")]
    StepTooLarge { eta: f64 },

    #[error(
        "sampling step too small for schedule: (1 - eta)^2 = {decay_sq} exceeds gamma^2 = {gamma_sq}"
    )]
    StepTooSmall { decay_sq: f64, gamma_sq: f64 },

    #[error("degenerate density: sigma = 0 with zero component variance")]
    DegenerateDensity,

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("stale activation cache: tape recorded for parameter generation {tape}, network is at {net}")]
    StaleCache { tape: u64, net: u64 },

    #[error("non-finite gradient at parameter {index} (optimizer step {step})")]
    NonFiniteGradient { index: usize, step: u64 },

    #[error("sampler diverged at step {step} (chain {chain}, |x| = {norm})")]
    Divergence { step: usize, chain: u64, norm: f64 },

    #[error("training diverged at iteration {iteration}: loss = {loss}; last good checkpoint: {last_good:?}")]
    TrainingDiverged {
        iteration: u64,
        loss: f64,
        last_good: Option<PathBuf>,
    },

    #[error("sigma = {0} is not a level of the training schedule")]
    SigmaNotInSchedule(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
