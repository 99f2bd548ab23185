//! Command-line front end: configuration, CSV I/O, experiment drivers, and
//! plot emission for the bound estimator.

pub mod config;
pub mod data;
pub mod experiments;
pub mod plots;
pub mod table;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("io: {e}"))
    }
}

impl From<blearner_core::DomainError> for CliError {
    fn from(e: blearner_core::DomainError) -> Self {
        match e {
            blearner_core::DomainError::InvalidLambda(_)
            | blearner_core::DomainError::InvalidFolds { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<blearner_core::blearner::EstimatorError> for CliError {
    fn from(e: blearner_core::blearner::EstimatorError) -> Self {
        use blearner_core::blearner::EstimatorError as E;
        use blearner_core::learners::LearnerError as L;
        match &e {
            E::Domain(d) => CliError::from(d.clone()),
            E::Nuisance { source, .. } | E::SecondStage(source) => match source {
                L::IrlsDiverged { .. } | L::BadWeights { .. } => {
                    CliError::Numeric(e.to_string())
                }
                L::BadSpec(_) => CliError::Config(e.to_string()),
                _ => CliError::Data(e.to_string()),
            },
            E::FoldMissingArm { .. } => CliError::Data(e.to_string()),
            E::HalvesTooSmall { .. } => CliError::Data(e.to_string()),
        }
    }
}

/// FNV-1a over the resolved config text; stamped into output headers so a
/// result file can be traced back to the exact configuration.
pub fn config_hash(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
