use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("frame sequence: {0}")]
    Sequence(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("not enough data: {0}")]
    Size(String),

    /// An external OCR process failed. `stderr` holds an excerpt of its diagnostics.
    #[error("ocr backend: {message}{}", fmt_stderr(.stderr))]
    OcrBackend { message: String, stderr: String },

    #[error("serialization: {0}")]
    Serialization(String),

    #[error("unsupported schema version {0:?}")]
    Version(String),

    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("transport: HTTP status {status}")]
    Transport { status: u16 },

    #[error("protocol: {0}")]
    Protocol(String),

    /// The endpoint could not be reached or the exchange broke off.
    #[error("connection: {0}")]
    Connection(String),

    #[error("timed out after {0} ms")]
    Timeout(u64),

    #[error("mock script: {0}")]
    Scripting(String),

    #[error("parameter file: {0}")]
    ParamFile(String),

    /// Wraps a failure with the pipeline position where it happened.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_stderr(stderr: &str) -> String {
    if stderr.is_empty() {
        String::new()
    } else {
        format!(" (stderr: {stderr})")
    }
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any `Context` layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures that originate outside this process: OCR children,
    /// HTTP endpoints, timeouts.
    pub fn is_external(&self) -> bool {
        matches!(
            self.root(),
            Error::OcrBackend { .. }
                | Error::Transport { .. }
                | Error::Protocol(_)
                | Error::Connection(_)
                | Error::Timeout(_)
                | Error::Scripting(_)
        )
    }
}
