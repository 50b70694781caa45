//! Shared plumbing for the YAML documents (topology, assignment, scenario,
//! reports) read and written by the library.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Syntax or schema error. The message carries the line/column and the
    /// offending field as reported by the YAML parser.
    #[error("parse error: {0}")]
    Parse(#[from] serde_yaml::Error),

    /// The document parsed, but its content breaks an invariant.
    #[error("{context}: {message}")]
    Invalid { context: String, message: String },
}

impl DocumentError {
    pub(crate) fn invalid(context: impl Into<String>, message: impl ToString) -> Self {
        DocumentError::Invalid {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

pub fn from_yaml_str<T: DeserializeOwned>(text: &str) -> Result<T, DocumentError> {
    Ok(serde_yaml::from_str(text)?)
}

pub fn to_yaml_string<T: Serialize>(value: &T) -> Result<String, DocumentError> {
    Ok(serde_yaml::to_string(value)?)
}

pub fn read_text(path: &Path) -> Result<String, DocumentError> {
    fs::read_to_string(path).map_err(|source| DocumentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), DocumentError> {
    fs::write(path, text).map_err(|source| DocumentError::Io {
        path: path.to_path_buf(),
        source,
    })
}
