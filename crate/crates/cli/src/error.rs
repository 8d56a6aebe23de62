use std::fmt;
use std::process::ExitCode;

use attnguard_core::concord::ConcordError;
use attnguard_core::engine::EngineError;
use attnguard_core::features::FeatureError;
use attnguard_core::forest::ForestError;
use attnguard_core::labeler::LabelError;
use attnguard_core::service::ServiceError;
use attnguard_core::signal::ParseError;
use attnguard_core::sim::SimError;
use attnguard_core::stats::StatsError;

/// Exit codes: 0 success, 2 usage, 3 bad input data, 4 internal or output
/// failure. Most usage errors come from the argument parser itself.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Data(_) => ExitCode::from(3),
            CliError::Internal(_) => ExitCode::from(4),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_errors!(
    ConcordError,
    EngineError,
    FeatureError,
    ForestError,
    LabelError,
    ParseError,
    ServiceError,
    SimError,
    StatsError
);
