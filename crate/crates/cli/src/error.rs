use std::fmt;

use bartlab::data::DataError;
use bartlab::decode::DecodeError;
use bartlab::metrics::MetricsError;
use bartlab::model::ModelError;
use bartlab::noising::NoiseError;
use bartlab::optim::OptimError;
use bartlab::tokenizer::TokenizerError;

/// Failure classes and their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files or settings: exit 2.
    Config(String),
    /// Missing or malformed inputs and I/O failures: exit 3.
    Data(String),
    /// Non-finite loss or gradient: exit 4.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::VocabTooSmall { .. } | TokenizerError::InvalidCoverage(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NoiseError> for CliError {
    fn from(e: NoiseError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) | ModelError::Incompatible(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::InvalidConfig(_) | OptimError::StepOutOfRange { .. } | OptimError::MicrobatchCount { .. } => {
                CliError::Config(e.to_string())
            }
            OptimError::NonFiniteGradient { .. } | OptimError::NonFiniteLoss { .. } => {
                CliError::Numerical(e.to_string())
            }
            OptimError::Model(m) => m.into(),
            OptimError::EmptyDataset | OptimError::Io(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::InvalidConfig(m) => CliError::Config(m),
            DecodeError::Model(m) => m.into(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::SpecInfeasible { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}
