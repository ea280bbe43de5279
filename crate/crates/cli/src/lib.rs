//! Scenario orchestration for the optimal execution solvers: configuration,
//! runs, comparisons, sweeps, resolution checks and file output.

pub mod check;
pub mod compare;
pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod sweep;

pub use compare::{compare_schedules, ComparisonReport};
pub use config::{Preset, ScenarioConfig, SolverKind};
pub use error::{CliError, FieldError};
pub use run::{run_scenario, RunOutput};
