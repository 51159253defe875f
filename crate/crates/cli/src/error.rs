use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}", config_message(.path, .line, .field, .message))]
    Config { path: PathBuf, line: Option<usize>, field: Option<String>, message: String },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: ebsde_core::Error,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Other(String),
}

fn config_message(path: &Path, line: &Option<usize>, field: &Option<String>, message: &str) -> String {
    let mut s = format!("config error in {}", path.display());
    if let Some(l) = line {
        s.push_str(&format!(" at line {l}"));
    }
    if let Some(f) = field {
        s.push_str(&format!(" (field `{f}`)"));
    }
    s.push_str(&format!(": {message}"));
    s
}

impl CliError {
    pub fn config(path: &Path, field: impl Into<String>, message: impl fmt::Display) -> Self {
        CliError::Config { path: path.to_path_buf(), line: None, field: Some(field.into()), message: message.to_string() }
    }

    pub fn core(context: impl Into<String>, source: ebsde_core::Error) -> Self {
        CliError::Core { context: context.into(), source }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }
}
