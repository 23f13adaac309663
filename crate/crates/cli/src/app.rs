use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub enum AppError {
    Config(String),
    Solver(String),
    Io(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Solver(_) => 3,
            AppError::Io(_) => 4,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "config error: {m}"),
            AppError::Solver(m) => write!(f, "solver failure: {m}"),
            AppError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for AppError {}

pub fn solver(e: herglotz_core::Error) -> AppError {
    AppError::Solver(e.to_string())
}

/// Collects output files in memory and writes them together at the end, each
/// stamped with the version and config hash.
pub struct Outputs {
    header: String,
    files: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    header: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

impl Outputs {
    pub fn new(config_hash: &str) -> Self {
        Outputs {
            header: format!("herglotz {VERSION} config_sha256={config_hash}"),
            files: Vec::new(),
        }
    }

    pub fn header(&self) -> &str {
        &self.header
    }

    pub fn csv(&mut self, name: &str, body: &str) {
        self.files
            .push((name.to_string(), format!("# {}\n{body}", self.header)));
    }

    /// JSON object with a leading `"header"` field.
    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) {
        let stamped = Stamped {
            header: &self.header,
            body,
        };
        let mut text = serde_json::to_string_pretty(&stamped).expect("output serializes");
        text.push('\n');
        self.files.push((name.to_string(), text));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, AppError> {
        std::fs::create_dir_all(dir).map_err(|e| AppError::Io(format!("creating {}: {e}", dir.display())))?;
        let mut written = Vec::new();
        for (name, text) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, text)
                .map_err(|e| AppError::Io(format!("writing {}: {e}", path.display())))?;
            written.push(path);
        }
        Ok(written)
    }
}
