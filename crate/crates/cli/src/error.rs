use flashpip_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// Stable machine-readable category.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
            CliError::Core(e) => match e {
                CoreError::Io(_) => "io",
                CoreError::Format(_) | CoreError::Truncated(_) | CoreError::Version { .. } => "format",
                CoreError::Schedule(_) => "schedule",
                CoreError::ArenaOverflow(_) => "arena",
                CoreError::NonFinite { .. } => "numeric",
                CoreError::Shape { .. } => "shape",
                CoreError::InvalidArgument(_) => "argument",
                CoreError::Tape(_) | CoreError::MissingGrad(_) => "internal",
            },
        }
    }

    /// `error[category]: message` on one line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {}", self.category(), msg.trim())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
