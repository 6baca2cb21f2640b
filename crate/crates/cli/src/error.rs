use pimcaps::planner::PlanError;
use pimcaps::sim::SimError;
use thiserror::Error;

use crate::config::{ConfigError, LoadError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Sim(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Sim(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    /// Simulation failure tagged with the config and scenario it came from.
    pub fn sim(context: &str, e: SimError) -> Self {
        match e {
            SimError::Config(m) => CliError::Config(format!("{context}: {m}")),
            other => CliError::Sim(format!("{context}: {other}")),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io(m) => CliError::Io(m),
            LoadError::Config(c) => c.into(),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        CliError::Config(e.to_string())
    }
}
