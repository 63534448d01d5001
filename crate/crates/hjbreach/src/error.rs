use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a field file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed file: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] hjbreach_core::Error),
}

/// Problems with a run configuration; maps to exit code 2.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: String, source: io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Core(#[from] hjbreach_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("writing {0}: {1}")]
    Export(String, String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        source: Box<RunError>,
    },
}

impl RunError {
    /// Process exit status: 2 for validation problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
