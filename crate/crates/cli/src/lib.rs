//! Batch commands behind the `longtail` binary.
//!
//! Each command takes its resolved arguments, a config section and a seed,
//! writes its file outputs and returns an [`Outcome`]: a JSON report, a
//! short human summary and, for commands that persist partial results
//! before failing, a deferred error.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use serde::Serialize;

/// Process exit status for each error class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const VALIDATION: u8 = 1;
    pub const IO: u8 = 2;
    pub const NUMERICAL: u8 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] longtail_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// A verification step produced a value outside its tolerance.
    #[error("check failed: {0}")]
    Check(String),
    /// Some files failed; everything else was written.
    #[error("{failed} of {total} files failed: {first}")]
    Partial {
        failed: usize,
        total: usize,
        first: String,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_io() => exit::IO,
            CliError::Core(_) | CliError::Config(_) => exit::VALIDATION,
            CliError::Io { .. } | CliError::Partial { .. } => exit::IO,
            CliError::Check(_) => exit::NUMERICAL,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug)]
pub struct Outcome {
    pub report: serde_json::Value,
    pub summary: String,
    /// Error to report after the outputs and report have been emitted.
    pub deferred: Option<CliError>,
}

impl Outcome {
    pub fn new(report: &impl Serialize, summary: String) -> Self {
        Outcome {
            report: serde_json::to_value(report).expect("reports serialize"),
            summary,
            deferred: None,
        }
    }

    pub fn with_deferred(mut self, err: Option<CliError>) -> Self {
        self.deferred = err;
        self
    }
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
