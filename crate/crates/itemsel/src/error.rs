use std::path::{Path, PathBuf};

use itemsel_core::Error as CoreError;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Validation = 1,
    Runtime = 2,
    Io = 3,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl CliError {
    pub fn kind(&self) -> ExitKind {
        match self {
            CliError::Validation(_) | CliError::Format { .. } => ExitKind::Validation,
            CliError::Runtime(_) => ExitKind::Runtime,
            CliError::Io { .. } => ExitKind::Io,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind() as i32
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    pub fn flag(flag: &str, message: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("--{flag}: {message}"))
    }
}

/// Input-shaped core errors are validation failures; the rest are runtime.
pub fn is_validation(e: &CoreError) -> bool {
    use CoreError::*;
    matches!(
        e,
        DuplicateId(_)
            | EmptyField(_)
            | WrongArity { .. }
            | LevelOutOfRange { .. }
            | ScoreOutOfRange { .. }
            | DuplicatePair { .. }
            | MissingPair { .. }
            | UnknownModel(_)
            | UnknownItem(_)
            | DuplicateAnnotation(_)
            | MissingAnnotation(_)
            | Shape(_)
            | KTooLarge { .. }
            | InvalidArgument(_)
            | ZeroNormFeature(_)
            | EmptyTrainMask
            | MissingReleaseOrder
            | EmptySourceSet
    )
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        if is_validation(&e) {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
