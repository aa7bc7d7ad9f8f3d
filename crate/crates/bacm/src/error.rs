use std::path::PathBuf;

/// Errors surfaced by the CLI, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{what} not found: {}", path.display())]
    MissingInput { what: &'static str, path: PathBuf },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}; partial trace at {}", trace.display())]
    Diverged { step: u32, trace: PathBuf },
    #[error("{failed} of {total} bench cells failed; see {}", report.display())]
    CellsFailed { failed: usize, total: usize, report: PathBuf },
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::MissingInput { .. } | AppError::Config(_) => 2,
            AppError::Diverged { .. } | AppError::CellsFailed { .. } | AppError::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Other(e.into())
    }
}
