use glbulk_core::{FieldError, SolverError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(SolverError),
    #[error("{0} hard assertion(s) failed")]
    Assertion(usize),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Assertion(_) => 1,
            Self::Config(_) => 2,
            Self::Solver(_) | Self::Io { .. } => 3,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.as_ref().display().to_string();
        move |source| Self::Io { path, source }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::InvalidSpec(m) => Self::Config(m),
            SolverError::Field(FieldError::InvalidGrid(m)) => Self::Config(m),
            other => Self::Solver(other),
        }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        SolverError::from(e).into()
    }
}
