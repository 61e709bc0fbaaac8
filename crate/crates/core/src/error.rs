use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied arguments that violate an operation's preconditions.
    #[error("invalid input: {0}")]
    Input(String),

    /// A matrix or vector did not have the expected shape.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A binary model file failed validation.
    #[error("model file {field} error: {message}")]
    Format { field: FormatField, message: String },

    /// A text file (feature CSV, config) could not be parsed.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A config file contained an unknown or malformed key.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The model-file field that failed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatField {
    Magic,
    Version,
    Checksum,
    Spec,
    Parameters,
    Labels,
    SourceMeanWeight,
}

impl std::fmt::Display for FormatField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            FormatField::Magic => "magic",
            FormatField::Version => "version",
            FormatField::Checksum => "checksum",
            FormatField::Spec => "spec",
            FormatField::Parameters => "parameters",
            FormatField::Labels => "labels",
            FormatField::SourceMeanWeight => "source_mean_w",
        };
        f.write_str(name)
    }
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(field: FormatField, msg: impl Into<String>) -> Self {
        Error::Format {
            field,
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than an internal fault.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => true,
        }
    }
}
