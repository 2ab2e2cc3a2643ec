//! Kemeny's constant for finite Markov chains and for birth-death processes
//! on the nonnegative integers.
//!
//! * [`chain`]: validated chains, stationary distributions, chain files.
//! * [`exact`]: hitting times, mean first passage times, Kemeny's constant by
//!   two independent routes, the deviation matrix.
//! * [`sim`]: Monte-Carlo estimators based on renewal-reward arguments.
//! * [`series`]: the series engine used for infinite state spaces.
//! * [`birth_death`]: birth-death families, their stationary laws, and the
//!   convergence test for Kemeny's constant.

pub mod birth_death;
pub mod chain;
mod elimination;
pub mod exact;
pub mod numeric;
pub mod series;
pub mod sim;

pub use chain::{
    stationary_distribution, ChainError, ChainFile, ChainKind, ChainWarning, MarkovChain,
    StationaryDistribution, ValidationOptions, Violation,
};
pub use exact::{
    default_tolerance, deviation_matrix, hitting_times, identity_report, kemeny_exact,
    kemeny_via_trace, mfpt_matrix, AnalysisError, AnalysisReport, DeviationMatrix,
    HittingProfile, IdentityReport,
};
pub use series::{sum_series, sum_terms, DivergenceReason, SeriesOptions, SeriesResult};
pub use birth_death::{BdError, BirthDeathSpec, Family, RateRule};
pub use sim::{
    simulate_path, step_count_identity, trajectory_rng, visit_deficit, Horizon, SimConfig, SimError,
    SimulationEstimate,
};
