use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: nsfts::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 usage or configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core { source, .. } if source.is_data_error() => 3,
            CliError::Core {
                source: nsfts::Error::Schema(_) | nsfts::Error::Json(_),
                ..
            } => 3,
            CliError::Core {
                source: nsfts::Error::Parameter(_) | nsfts::Error::Range(_),
                ..
            } => 2,
            CliError::Core { .. } => 4,
            CliError::Write { .. } => 3,
        }
    }
}

/// Attaches a context label to library errors.
pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError>;
}

impl<T> Context<T> for nsfts::Result<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core {
            context: what.into(),
            source,
        })
    }
}
