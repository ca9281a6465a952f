//! Error types shared across the solver stages.

use thiserror::Error;

/// Parameter validation failure.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid parameter {key} = {value}: {reason}")]
pub struct ParamErrorInner {
    pub key: &'static str,
    pub value: f64,
    pub reason: &'static str,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("invalid parameter {key} = {value}: {reason}")]
    Invalid { key: &'static str, value: f64, reason: &'static str },
}

/// Top-level error for the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Param(#[from] ParamError),

    #[error("Riccati solver failed: {0}")]
    RiccatiFailure(String),

    #[error("backward integration failed at s = {s}: {reason} ({nodes} nodes retained)")]
    IntegrationFailure { s: f64, reason: String, nodes: usize },

    #[error("trajectory never reaches the level V_c = {v_c}")]
    UndefinedDistance { v_c: f64 },

    #[error("bang-bang locus requires a torque bound (u_max)")]
    NotApplicable,

    #[error("value field build failed: {0}")]
    BuildFailure(String),

    #[error("query ({theta}, {theta_dot}) is outside the covered region")]
    OutOfCoverage { theta: f64, theta_dot: f64 },

    #[error("costate query ambiguous near a nonsmooth curve")]
    AmbiguousCostate,

    #[error("training failed: {reason} (history of {history_len} records kept)")]
    TrainingFailure { reason: String, history_len: usize },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }
}
