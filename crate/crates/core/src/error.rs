use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward already ran on this graph; call reset_backward() first")]
    BackwardTwice,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss does not depend on any tensor that requires grad")]
    Detached,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("feedback not supported: oscillator routing contains a cycle through oscillator {0}")]
    Feedback(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("envelope channel {channel} out of bounds: value {value} not in [0, {max}]")]
    EnvelopeBounds { channel: usize, value: f64, max: f64 },

    #[error("expected {expected} frames, got {got}")]
    FrameCount { expected: usize, got: usize },

    #[error("decoder produced NaN at layer {0}")]
    NanActivation(usize),

    #[error("container: {0}")]
    Container(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint/config mismatch: {0}")]
    Mismatch(String),

    #[error("training aborted at step {step}: {reason}")]
    TrainingAborted { step: u64, reason: String },

    #[error("missing file {0}")]
    Missing(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { op, detail: detail.into() }
    }
}
