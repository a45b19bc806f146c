use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("input too short: {frames} frames, need at least {min}")]
    TooShort { frames: usize, min: usize },

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error(
        "cannot parse variant `{name}`: {reason} \
         (expected `resnet`, `resnext-{{w}}w{{c}}c` or `res2net-{{w}}w{{s}}s`)"
    )]
    Variant { name: String, reason: String },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("missing utterance(s): {}", .0.join(", "))]
    MissingUtterances(Vec<String>),

    #[error("{context}: {message}")]
    Format { context: String, message: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }
}
