use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward root must be a 1x1 scalar, got {0:?}")]
    NonScalarRoot((usize, usize)),

    #[error("op {0} does not support differentiable input gradients")]
    UnsupportedSecondOrder(&'static str),

    #[error("tensors belong to different graphs")]
    GraphMismatch,

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("empty data: {0}")]
    EmptyData(&'static str),

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("invalid kernel bandwidth {0}")]
    InvalidBandwidth(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("training diverged at step {step}: {detail}")]
    Training { step: usize, detail: String },

    #[error("projection classifier unreliable: test accuracy {0:.4} below 0.99")]
    ProjectionUnreliable(f64),

    #[error("unsupported format tag {found:?}, expected {expected:?}")]
    Format { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short machine-readable category, used for process exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. }
            | Error::NonScalarRoot(_)
            | Error::UnsupportedSecondOrder(_)
            | Error::GraphMismatch => "shape",
            Error::NonFinite(_) | Error::Training { .. } => "training",
            Error::LabelOutOfRange { .. }
            | Error::EmptyData(_)
            | Error::TooFewSamples { .. }
            | Error::Schema(_) => "data",
            Error::InvalidBandwidth(_) | Error::InvalidArgument(_) => "argument",
            Error::ProjectionUnreliable(_) => "evaluation",
            Error::Format { .. } | Error::Json(_) | Error::Csv(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
