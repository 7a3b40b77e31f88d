use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// An artifact from an earlier pipeline step is absent.
    #[error("{0}")]
    Missing(String),
    #[error("{0}")]
    Integrity(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] surrogate_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use surrogate_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Integrity(_) => 4,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::Config(_) => 2,
                E::Shape { .. }
                | E::Parse { .. }
                | E::Schema(_)
                | E::OutOfRange { .. }
                | E::InsufficientData(_) => 4,
                E::NotScalar(_) | E::NonFiniteGradient(_) | E::Io(_) => 1,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type CliResult<T> = Result<T, CliError>;
