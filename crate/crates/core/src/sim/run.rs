use super::config::ScenarioConfig;
use super::metrics::RunMetrics;
use super::state::SimState;
use crate::aggregation::{run_round, RoundResult};
use crate::error::Result;

/// A run in progress: state plus the metrics collected so far.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub state: SimState,
    pub metrics: RunMetrics,
    next_round: u64,
}

impl Simulation {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        let state = SimState::new(config)?;
        let metrics = RunMetrics {
            name: config.name.clone(),
            seed: config.seed,
            ..RunMetrics::default()
        };
        Ok(Self {
            state,
            metrics,
            next_round: 0,
        })
    }

    pub fn next_round(&self) -> u64 {
        self.next_round
    }

    pub fn is_finished(&self) -> bool {
        self.next_round >= self.state.config.rounds
    }

    /// Runs one round and records its metrics. A failed round still
    /// consumes its slot in the schedule.
    pub fn step(&mut self) -> Result<RoundResult> {
        let result = run_round(&mut self.state, self.next_round)?;
        self.metrics.record(&self.state, &result);
        self.next_round += 1;
        Ok(result)
    }

    pub fn run_to_end(mut self) -> Result<(RunMetrics, SimState)> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok((self.metrics, self.state))
    }
}

/// Builds the network, partitions data, and executes every scheduled round.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunMetrics> {
    Simulation::new(config)?.run_to_end().map(|(m, _)| m)
}
