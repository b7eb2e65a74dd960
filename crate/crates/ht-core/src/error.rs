use std::fmt;

/// Error type shared by every crate in the workspace.
///
/// Variants are coarse categories; the message carries the specifics.
/// `Display` prefixes the category so CLI output and logs stay greppable.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not agree.
    Dimension(String),
    /// A value left the finite range (NaN or infinity).
    Numeric(String),
    /// Invalid configuration (bad hyperparameter, kernel size, ratio, ...).
    Config(String),
    /// An object was used after it was consumed (e.g. double backward).
    Lifecycle(String),
    /// Invalid input data (empty caption, label out of range, ...).
    Input(String),
    /// A caller broke an API contract (e.g. non-deterministic closure).
    Contract(String),
    /// Sampling could not be satisfied (e.g. empty class).
    Sampling(String),
    /// An evaluation protocol was violated (e.g. single-domain cross-eval).
    Protocol(String),
    /// A file referenced by a manifest or checkpoint is missing or corrupt.
    Integrity(String),
    /// A statistic is undefined for the given sample (e.g. zero variance).
    DegenerateSample(String),
    /// The operation is not supported for the given arguments.
    Unsupported(String),
    /// Underlying I/O failure.
    Io(String),
    /// Malformed file contents.
    Parse(String),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Numeric(_) => "numeric",
            Error::Config(_) => "config",
            Error::Lifecycle(_) => "lifecycle",
            Error::Input(_) => "input",
            Error::Contract(_) => "contract",
            Error::Sampling(_) => "sampling",
            Error::Protocol(_) => "protocol",
            Error::Integrity(_) => "integrity",
            Error::DegenerateSample(_) => "degenerate-sample",
            Error::Unsupported(_) => "unsupported",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }

    fn message(&self) -> &str {
        match self {
            Error::Dimension(m)
            | Error::Numeric(m)
            | Error::Config(m)
            | Error::Lifecycle(m)
            | Error::Input(m)
            | Error::Contract(m)
            | Error::Sampling(m)
            | Error::Protocol(m)
            | Error::Integrity(m)
            | Error::DegenerateSample(m)
            | Error::Unsupported(m)
            | Error::Io(m)
            | Error::Parse(m) => m,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category(), self.message())
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
