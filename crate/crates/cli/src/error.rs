use std::fmt;

use kemeny_core::{AnalysisError, BdError, ChainError, SimError};

/// A failed command, mapped onto the documented exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid input (exit 2).
    BadInput(String),
    /// A solve failed or missed its residual tolerance (exit 3).
    Numerical(String),
    /// Per-start sums of the hitting route disagree (exit 4).
    Constancy(String),
    /// The birth-death process has no stationary distribution (exit 5).
    NotPositiveRecurrent(String),
    /// A limit estimator was asked to run on a periodic chain (exit 6).
    Periodic(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadInput(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Constancy(_) => 4,
            CliError::NotPositiveRecurrent(_) => 5,
            CliError::Periodic(_) => 6,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::BadInput(m) => ("bad input", m),
            CliError::Numerical(m) => ("numerical failure", m),
            CliError::Constancy(m) => ("constancy violation", m),
            CliError::NotPositiveRecurrent(m) => ("not positive recurrent", m),
            CliError::Periodic(m) => ("periodic chain", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::SingularSystem(_) | ChainError::InaccurateSolution { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::BadInput(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Chain(c) => c.into(),
            AnalysisError::ConstancyViolation { .. } => CliError::Constancy(e.to_string()),
            AnalysisError::ResidualViolation { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<BdError> for CliError {
    fn from(e: BdError) -> Self {
        match e {
            BdError::NotPositiveRecurrent { .. } => CliError::NotPositiveRecurrent(e.to_string()),
            BdError::Chain(c) => c.into(),
            BdError::StationaryUndecided { .. } | BdError::PreconditionUnmet(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::BadInput(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Chain(c) => c.into(),
            SimError::PeriodicChain { .. } => CliError::Periodic(e.to_string()),
            SimError::InvalidConfig(_) => CliError::BadInput(e.to_string()),
        }
    }
}
