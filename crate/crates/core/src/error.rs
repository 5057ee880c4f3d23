use std::io;

pub type Result<T, E = ZeusError> = std::result::Result<T, E>;

/// Errors raised by the engine.
///
/// [`ZeusError::kind`] returns a stable name for each variant; the CLI
/// prints it in its machine-readable error line.
#[derive(Debug, thiserror::Error)]
pub enum ZeusError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid prompt spec: {0}")]
    InvalidPromptSpec(String),
    #[error("degenerate prototype for class {class_id}: mean embedding norm {norm:e}")]
    DegeneratePrototype { class_id: u64, norm: f64 },
    #[error("degenerate vector: norm {0:e} below 1e-12")]
    DegenerateVector(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated input: {0}")]
    Truncated(String),
    #[error("corrupt input: {0}")]
    Corrupt(String),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl ZeusError {
    pub fn kind(&self) -> &'static str {
        match self {
            ZeusError::InvalidInput(_) => "InvalidInput",
            ZeusError::InvalidPromptSpec(_) => "InvalidPromptSpec",
            ZeusError::DegeneratePrototype { .. } => "DegeneratePrototype",
            ZeusError::DegenerateVector(_) => "DegenerateVector",
            ZeusError::DimMismatch { .. } => "DimMismatch",
            ZeusError::InvalidGrid(_) => "InvalidGrid",
            ZeusError::InvalidSpec(_) => "InvalidSpec",
            ZeusError::Format(_) => "FormatError",
            ZeusError::Truncated(_) => "TruncatedError",
            ZeusError::Corrupt(_) => "CorruptError",
            ZeusError::Image(_) => "ImageError",
            ZeusError::Json(_) => "JsonError",
            ZeusError::Io(_) => "IoError",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> ZeusError {
    ZeusError::InvalidInput(msg.into())
}
