use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// A failed command, reported on stderr as one JSON line.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
    pub path: Option<PathBuf>,
    pub input: bool,
}

impl Failure {
    pub fn input(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            path: None,
            input: true,
        }
    }

    pub fn at(mut self, path: impl AsRef<Path>) -> Self {
        self.path = Some(path.as_ref().to_path_buf());
        self
    }

    pub fn exit_code(&self) -> i32 {
        if self.input {
            EXIT_INPUT
        } else {
            EXIT_INTERNAL
        }
    }

    pub fn json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            message: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            path: Option<String>,
            exit_code: i32,
        }
        let line = Line {
            error: self.kind,
            message: &self.message,
            path: self.path.as_ref().map(|p| p.display().to_string()),
            exit_code: self.exit_code(),
        };
        serde_json::to_string(&line).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.path {
            Some(p) => write!(f, "{}: {}", p.display(), self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl From<labelmerge::Error> for Failure {
    fn from(e: labelmerge::Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
            path: None,
            input: e.is_input_error(),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Attach a file path to library errors raised while handling that file.
pub trait AtPath<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T> AtPath<T> for labelmerge::Result<T> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| Failure::from(e).at(path))
    }
}
