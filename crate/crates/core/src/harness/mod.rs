//! Scenario files, seeded campaigns, sweeps, grid search and file output.

use std::path::PathBuf;

use thiserror::Error;

pub mod campaign;
pub mod config;
pub mod emit;
pub mod simulate;
pub mod tasks;

pub use campaign::{grid_search, run_summaries, run_trials, sweep, Campaign, CampaignResult, GridResult, SweepResult, TrialSummary};
pub use config::{load_scenario, Event, Initial, PopulationScenario, RigidityScenario, Scenario};
pub use simulate::{simulate, TrialResult};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error("trial {index} (seed {seed}) failed: {message}")]
    Trial { index: usize, seed: u64, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    /// Process exit code: 1 for configuration errors, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}
