use std::fmt;
use std::path::Path;

use serde::Serialize;

/// Validation failures exit with 1, runtime failures with 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Runtime,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Validation => 1,
            Self::Runtime => 2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    /// File the problem was found in, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn validation(file: Option<&Path>, message: impl fmt::Display) -> Self {
        Self { kind: ErrorKind::Validation, file: file.map(|p| p.display().to_string()), message: message.to_string() }
    }

    pub fn runtime(file: Option<&Path>, message: impl fmt::Display) -> Self {
        Self { kind: ErrorKind::Runtime, file: file.map(|p| p.display().to_string()), message: message.to_string() }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ErrorKind::Validation => "validation error",
            ErrorKind::Runtime => "runtime error",
        };
        match &self.file {
            Some(file) => write!(f, "{kind}: {file}: {}", self.message),
            None => write!(f, "{kind}: {}", self.message),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

/// Reads an input file; a missing or unreadable input is a validation error.
pub fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::validation(Some(path), format!("cannot read input: {e}")))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    String::from_utf8(read_input(path)?).map_err(|_| CliError::validation(Some(path), "input is not valid UTF-8"))
}
