use std::fmt::Display;
use std::path::Path;

use thiserror::Error;

use mgembed::classifiers::ClassifierError;
use mgembed::eval::EvalError;
use mgembed::mimic::MimicError;
use mgembed::skipgram::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    /// A data error naming the file and the format it should have.
    pub fn file(path: &Path, format: &str, err: impl Display) -> CliError {
        CliError::Data(format!("{}: {err} (expected {format})", path.display()))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::Diverged { .. } => CliError::Numerical(e.to_string()),
            ClassifierError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MimicError> for CliError {
    fn from(e: MimicError) -> Self {
        match e {
            MimicError::Diverged(_) => CliError::Numerical(e.to_string()),
            MimicError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Classifier(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
