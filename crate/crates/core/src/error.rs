//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("expected a scalar value, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("node {id} is not a leaf of this trace")]
    NotALeaf { id: usize },

    #[error("node {id} is not part of this trace (trace has {len} nodes)")]
    UnknownNode { id: usize, len: usize },

    #[error("defense `{kind}` has no density conditional (degenerate/Dirac); use the analytic inversion instead")]
    DegenerateConditional { kind: String },

    #[error("no usable neuron: every first-layer bias gradient is below tolerance {tolerance}")]
    NoUsableNeuron { tolerance: f64 },

    #[error("attack objective became non-finite at step {step}")]
    AttackAborted { step: usize },

    #[error("training diverged (non-finite loss) at step {step}")]
    TrainingDiverged { step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("bad file format: {0}")]
    BadFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}
