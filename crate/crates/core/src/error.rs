use std::fmt;
use std::io;
use std::path::PathBuf;

/// Every failure the library can report. `category()` gives the stable,
/// machine-parseable tag the CLI prints on exit.
#[derive(Debug)]
pub enum Error {
    Config(String),
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },
    NonFinite(String),
    Data(String),
    Format(String),
    Init(String),
    Training(String),
    Io {
        path: PathBuf,
        source: io::Error,
    },
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::Shape { .. } => "config",
            Error::NonFinite(_) => "numeric",
            Error::Data(_) => "data",
            Error::Format(_) => "format",
            Error::Init(_) => "init",
            Error::Training(_) => "training",
            Error::Io { .. } => "io",
            Error::Internal(_) => "internal",
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl fmt::Debug, found: impl fmt::Debug) -> Self {
        Error::Shape {
            op,
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Shape {
                op,
                expected,
                found,
            } => write!(f, "shape mismatch in {op}: expected {expected}, found {found}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Init(msg) => write!(f, "initialization error: {msg}"),
            Error::Training(msg) => write!(f, "training error: {msg}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(format!("invalid JSON: {e}"))
    }
}
