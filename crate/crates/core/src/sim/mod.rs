//! Election generation and Monte Carlo experiments.

pub mod experiment;
pub mod generate;

pub use experiment::{run_experiment, ExperimentSpec, RepRecord, Scenario, ScenarioSummary};
pub use generate::{generate, CvrError, GenSpec, ImprintSpec};
