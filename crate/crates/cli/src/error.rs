use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {message}")]
    Field { field: String, message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}: unsupported schema version {found} (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
}
