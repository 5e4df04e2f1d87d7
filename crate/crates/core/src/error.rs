use std::io;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("tape error: {0}")]
    Tape(String),

    #[error("parameter `{0}` requires a gradient but has none")]
    MissingGrad(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unexpected end of data while reading {0}")]
    Truncated(String),

    #[error("unsupported version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("arena overflow: {0}")]
    ArenaOverflow(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
