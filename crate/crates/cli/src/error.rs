use std::path::{Path, PathBuf};

use copula_vi::elbo::FitError;
use thiserror::Error;

/// Failures of a CLI run, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] copula_vi::Error),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("acceptance failure: {0}")]
    Acceptance(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// 0 success, 1 acceptance failure, 2 configuration or IO error,
    /// 3 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Acceptance(_) => 1,
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Core(e) | CliError::Fit(FitError::Setup(e)) => core_code(e),
            CliError::Fit(FitError::Diverged { .. }) => 3,
        }
    }
}

fn core_code(e: &copula_vi::Error) -> i32 {
    match e {
        copula_vi::Error::Config(_) => 2,
        copula_vi::Error::Domain(_) | copula_vi::Error::Numerical(_) => 3,
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io { path: PathBuf::from("<csv>"), source },
            other => CliError::Config(format!("{other:?}")),
        }
    }
}
