use thiserror::Error;

use crate::learners::ModelBundle;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid stage {stage}: expected 1..={n_stages}")]
    InvalidStage { stage: i64, n_stages: usize },

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("mask violation: stage {to} is not adjacent to stage {from}")]
    MaskViolation { from: usize, to: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("augmentation infeasible: no same-stage donor records for stage {stage}")]
    AugmentationInfeasible { stage: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training diverged: non-finite {what} at epoch {epoch}, step {step}")]
    TrainingDiverged {
        what: String,
        epoch: usize,
        step: usize,
        /// Networks as of the end of the last completed epoch.
        last_good: Box<ModelBundle>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code for the command-line front end: 1 for usage errors,
    /// 2 for everything data- or config-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            _ => 2,
        }
    }

    /// Short machine-parsable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidStage { .. } => "invalid-stage",
            Error::Shape { .. } => "shape",
            Error::MaskViolation { .. } => "mask-violation",
            Error::Numeric(_) => "numeric",
            Error::Config(_) => "config",
            Error::EmptyInput(_) => "empty-input",
            Error::AugmentationInfeasible { .. } => "augmentation-infeasible",
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::DataIntegrity(_) => "data-integrity",
            Error::Usage(_) => "usage",
            Error::TrainingDiverged { .. } => "training-diverged",
            Error::Io(_) => "io",
        }
    }
}
