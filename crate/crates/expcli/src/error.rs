use std::path::Path;

/// Problems with a configuration file; the CLI exits with status 2.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Syntax(String),
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("{0}")]
    Io(String),
    #[error("{path}: {inner}")]
    InFile {
        path: String,
        inner: Box<ConfigError>,
    },
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn in_file(self, path: &Path) -> Self {
        ConfigError::InFile {
            path: path.display().to_string(),
            inner: Box::new(self),
        }
    }
}
