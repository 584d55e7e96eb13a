use std::fmt;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{0}")]
    Config(ConfigError),
    #[error(transparent)]
    Core(#[from] quadsde_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("digest mismatch for {0}")]
    DigestMismatch(String),
    #[error("{0}")]
    Usage(String),
}

/// Line 0 means the value did not come from a file (a default, `--set` or a
/// missing key).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("config")?;
        if self.line > 0 {
            write!(f, " line {}", self.line)?;
        }
        if let Some(k) = &self.key {
            write!(f, "{} key `{k}`", if self.line > 0 { "," } else { "" })?;
        }
        write!(f, ": {}", self.message)
    }
}

impl LabError {
    pub fn config(line: usize, key: Option<&str>, message: impl Into<String>) -> Self {
        LabError::Config(ConfigError { line, key: key.map(str::to_string), message: message.into() })
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }
}
