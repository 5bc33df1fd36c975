//! Scenario configuration, simulation state, the multi-round driver,
//! metrics, and the experiment presets.

mod config;
mod metrics;
mod presets;
mod run;
mod state;

pub use config::*;
pub use metrics::{quantile, ConsensusRow, HeaderOf, NetworkRow, ReputationRow, RoleStats, RoundRow, RunMetrics};
pub use presets::{experiment_arms, experiment_preset, run_arms, run_experiment, Arm, ArmRun, Experiment};
pub use run::{run_scenario, Simulation};
pub use state::*;
