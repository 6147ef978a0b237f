use std::path::PathBuf;

/// Everything a command can fail with.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tdsm::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot parse {path}: {source}")]
    Toml {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: tdsm::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

/// Process exit codes.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const FORMAT: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const IO: i32 = 5;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Toml { .. } => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Core(e) | CliError::File { source: e, .. } => match e {
                tdsm::Error::Config(_) => exit::CONFIG,
                tdsm::Error::Format { .. } | tdsm::Error::Json(_) => exit::FORMAT,
                tdsm::Error::NonFinite(_) => exit::NUMERIC,
                tdsm::Error::Io(_) => exit::IO,
                tdsm::Error::Shape(_) | tdsm::Error::Contract(_) => exit::OTHER,
            },
        }
    }
}

/// Attaches a path to an I/O error.
pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

/// Attaches a path to a core error when it concerns the file itself.
pub(crate) fn core_at(path: impl Into<PathBuf>) -> impl FnOnce(tdsm::Error) -> CliError {
    let path = path.into();
    move |e| match e {
        tdsm::Error::Io(source) => CliError::Io { path, source },
        e @ (tdsm::Error::Format { .. } | tdsm::Error::Json(_)) => CliError::File { path, source: e },
        other => CliError::Core(other),
    }
}
