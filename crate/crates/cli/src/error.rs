use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] memoir_core::Error),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// 2 for anything the caller got wrong before work started, else 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                memoir_core::Error::Config(_) | memoir_core::Error::Parameter(_) => 2,
                _ => 1,
            },
            CliError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Core(e) => e.kind(),
        }
    }

    fn path(&self) -> Option<String> {
        match self {
            CliError::Io { path, .. } => Some(path.display().to_string()),
            CliError::Core(memoir_core::Error::Io { path, .. }) => Some(path.display().to_string()),
            _ => None,
        }
    }

    /// The single stderr line of a failed run: one JSON object.
    pub fn to_line(&self) -> String {
        let mut v = json!({
            "error": self.kind(),
            "code": self.exit_code(),
            "message": flatten(&self.to_string()),
        });
        if let Some(p) = self.path() {
            v["path"] = json!(p);
        }
        v.to_string()
    }
}

fn flatten(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
