use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor axis disagreed with what an operation required.
    #[error("shape mismatch on axis {axis} in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        axis: usize,
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("image dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint magic mismatch")]
    CheckpointMagic,
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u16),
    #[error("truncated checkpoint: {0}")]
    CheckpointTruncated(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("non-finite loss at step {step} ({stage}): {loss_name} = {value}")]
    NonFiniteLoss {
        step: u64,
        stage: String,
        loss_name: String,
        value: f64,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
