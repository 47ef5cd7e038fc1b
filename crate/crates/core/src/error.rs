use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("reflection padding of {pad} needs an input larger than {height}x{width}")]
    ReflectionPad {
        pad: usize,
        height: usize,
        width: usize,
    },

    #[error("{0} in training mode needs a batch of at least 2")]
    BatchSizeOne(&'static str),

    #[error("{0} layer has no bias network")]
    MissingBiasNet(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("need at least k = {k} samples, got {samples}")]
    TooFewSamples { samples: usize, k: usize },

    #[error("feature vector at stage {0} has zero norm")]
    ZeroNormFeature(usize),

    #[error("non-finite loss at step {step} ({detail})")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("bad tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
