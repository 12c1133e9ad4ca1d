use shadekit::datakit::DataError;
use shadekit::evalkit::EvalError;
use shadekit::models::ModelError;
use thiserror::Error;

/// Command failure, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad configuration or a violated command contract (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Failure while doing the work (exit 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::ParameterRange { .. } | DataError::DegenerateTransform(_) | DataError::Config(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Data(d) => d.into(),
            ModelError::Spec(_)
            | ModelError::Family { .. }
            | ModelError::MissingMask(_)
            | ModelError::MissingPair(_)
            | ModelError::Format(_) => CliError::Usage(e.to_string()),
            ModelError::Tensor(_) | ModelError::BoxOutOfBounds(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
