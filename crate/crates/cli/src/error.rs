use std::path::Path;

use thiserror::Error;

/// Failure classes and their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Bad config, bad input files, unwritable output: exit 2.
    Config,
    /// Simulation or estimation failed: exit 3.
    Numerical,
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Config, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Numerical, message: message.into() }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::config(format!("{}: {e}", path.display()))
    }

    pub fn context(self, prefix: impl std::fmt::Display) -> Self {
        Self { message: format!("{prefix}: {}", self.message), ..self }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ExitKind::Config => 2,
            ExitKind::Numerical => 3,
        }
    }
}

/// Exit code when some multi-start fits failed but others are usable.
pub const EXIT_PARTIAL: i32 = 4;
