use std::path::PathBuf;

use hia_core::Error as CoreError;

/// Exit status for bad input: configuration, schema or data violations.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for I/O failures and numeric trouble during computation.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum HiaError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed JSON/CSV or a schema violation.
    #[error("{}: {detail}", path.display())]
    Parse { path: PathBuf, detail: String },
    /// A core error raised while processing a specific file.
    #[error("{}: {source}", path.display())]
    Data {
        path: PathBuf,
        #[source]
        source: CoreError,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("training diverged: {0}")]
    Diverged(String),
}

pub type Result<T, E = HiaError> = std::result::Result<T, E>;

fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Validation { .. }
        | CoreError::Config(_)
        | CoreError::Lookup(_)
        | CoreError::Shape { .. } => EXIT_VALIDATION,
        CoreError::NonFinite { .. } | CoreError::Numeric(_) | CoreError::Contract(_) => EXIT_RUNTIME,
    }
}

impl HiaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HiaError::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        HiaError::Parse { path: path.into(), detail: detail.into() }
    }

    pub fn data(path: impl Into<PathBuf>, source: CoreError) -> Self {
        HiaError::Data { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HiaError::Parse { .. } => EXIT_VALIDATION,
            HiaError::Data { source, .. } | HiaError::Core(source) => core_exit_code(source),
            HiaError::Io { .. } | HiaError::Diverged(_) => EXIT_RUNTIME,
        }
    }
}
