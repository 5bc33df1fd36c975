use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::metrics::RunMetrics;
use super::run::run_scenario;
use crate::adversary::AttackKind;
use crate::aggregation::AggregatorKind;
use crate::consensus::{OpClass, VoteWeighting};
use crate::error::{NexusError, Result};
use crate::network::LatencyModel;
use crate::selection::SelectionStrategy;

/// The ten experiment families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Exp5,
    Exp6,
    Exp7,
    Exp8,
    Exp9,
    Exp10,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Exp1,
        Experiment::Exp2,
        Experiment::Exp3,
        Experiment::Exp4,
        Experiment::Exp5,
        Experiment::Exp6,
        Experiment::Exp7,
        Experiment::Exp8,
        Experiment::Exp9,
        Experiment::Exp10,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
            Experiment::Exp3 => "exp3",
            Experiment::Exp4 => "exp4",
            Experiment::Exp5 => "exp5",
            Experiment::Exp6 => "exp6",
            Experiment::Exp7 => "exp7",
            Experiment::Exp8 => "exp8",
            Experiment::Exp9 => "exp9",
            Experiment::Exp10 => "exp10",
        }
    }

    pub fn title(&self) -> &'static str {
        match self {
            Experiment::Exp1 => "convergence and robustness under gradient flipping",
            Experiment::Exp2 => "multi-attack resilience",
            Experiment::Exp3 => "privacy-utility tradeoff",
            Experiment::Exp4 => "participant selection impact",
            Experiment::Exp5 => "model validation under Sybil attack",
            Experiment::Exp6 => "non-IID sensitivity",
            Experiment::Exp7 => "infrastructure scalability",
            Experiment::Exp8 => "cross-cloud performance",
            Experiment::Exp9 => "churn resilience",
            Experiment::Exp10 => "reputation dynamics",
        }
    }
}

impl FromStr for Experiment {
    type Err = NexusError;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| NexusError::UnknownExperiment(s.to_string()))
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One point of an experiment sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub label: String,
    pub config: ScenarioConfig,
}

fn arm(label: impl Into<String>, config: ScenarioConfig) -> Arm {
    let label = label.into();
    let mut config = config;
    config.name = label.clone();
    Arm { label, config }
}

/// Desk-scale base: `100·scale` nodes, `20·scale` trainers, `10·scale`
/// selected per round.
fn desk(scale: usize) -> ScenarioConfig {
    let mut c = ScenarioConfig::with_seed(0);
    c.nodes.gpu_pool = 20 * scale;
    c.nodes.cpu_pool = 80 * scale;
    c.nodes.k_train = 10 * scale;
    c
}

/// Base configuration of an experiment; sweeps vary it via [`experiment_arms`].
pub fn experiment_preset(exp: Experiment, scale: usize) -> Result<ScenarioConfig> {
    if scale == 0 {
        return Err(NexusError::InvalidArgument("scale must be >= 1".into()));
    }
    let mut c = desk(scale);
    c.name = exp.name().to_string();
    match exp {
        Experiment::Exp1 | Experiment::Exp2 => {
            c.rounds = 40;
            c.attack.kind = AttackKind::GradientFlip;
            c.attack.byzantine_fraction = 0.2;
        }
        Experiment::Exp3 => {
            c.rounds = 40;
        }
        Experiment::Exp4 => {
            c.rounds = 60;
            c.attack.kind = AttackKind::Unreliable;
            c.attack.byzantine_fraction = 0.2;
            c.attack.failure_prob = 0.4;
        }
        Experiment::Exp5 => {
            c.rounds = 40;
            c.nodes.warm_start_rounds = 100;
            c.attack.kind = AttackKind::Sybil;
            c.consensus.op_class = OpClass::ModelCheckpoint;
            c.consensus.adversarial_proposal_prob = 0.5;
        }
        Experiment::Exp6 => {
            c.rounds = 40;
        }
        Experiment::Exp7 => {
            c.rounds = 3;
            c.nodes.cpu_pool = 1000 * scale - c.nodes.gpu_pool;
            c.network.lookups_per_round = 200;
        }
        Experiment::Exp8 => {
            c.rounds = 30;
        }
        Experiment::Exp9 => {
            c.rounds = 60;
            c.network.churn_rate = 0.1;
            c.attack.kind = AttackKind::Unreliable;
            c.attack.byzantine_fraction = 0.2;
        }
        Experiment::Exp10 => {
            c.rounds = 100;
            c.nodes.gpu_pool = 100 * scale;
            c.nodes.cpu_pool = 0;
            c.nodes.k_train = 100 * scale;
            c.attack.kind = AttackKind::Unreliable;
            c.attack.byzantine_fraction = 0.2;
            c.attack.failure_prob = 0.4;
        }
    }
    c.validate()?;
    Ok(c)
}

/// Every sweep point of an experiment, each a complete configuration.
pub fn experiment_arms(exp: Experiment, scale: usize) -> Result<Vec<Arm>> {
    let base = experiment_preset(exp, scale)?;
    let aggregators = [
        AggregatorKind::RepFedavg,
        AggregatorKind::Fedavg,
        AggregatorKind::TrimmedMean,
        AggregatorKind::Krum,
        AggregatorKind::Median,
    ];
    let mut arms = Vec::new();
    match exp {
        Experiment::Exp1 => {
            for benign in [true, false] {
                for kind in aggregators {
                    let mut c = base.clone();
                    c.aggregation.kind = kind;
                    if benign {
                        c.attack.kind = AttackKind::None;
                    }
                    let tag = if benign { "benign" } else { "flip20" };
                    arms.push(arm(format!("{tag}-{}", kind.name()), c));
                }
            }
            let mut c = base.clone();
            c.aggregation.kind = AggregatorKind::Fedavg;
            c.aggregation.exclude_attackers = true;
            arms.push(arm("flip20-honest_only_fedavg", c));
        }
        Experiment::Exp2 => {
            for attack in [AttackKind::GradientFlip, AttackKind::Backdoor, AttackKind::Alie] {
                for kind in aggregators {
                    let mut c = base.clone();
                    c.attack.kind = attack;
                    c.aggregation.kind = kind;
                    arms.push(arm(format!("{}-{}", attack.name(), kind.name()), c));
                }
            }
        }
        Experiment::Exp3 => {
            for sigma in [0.0, 0.5, 1.1, 2.0] {
                let mut c = base.clone();
                c.dp.noise_multiplier = sigma;
                arms.push(arm(format!("sigma{sigma}"), c));
            }
        }
        Experiment::Exp4 => {
            for strategy in [
                SelectionStrategy::Random,
                SelectionStrategy::CapabilityOnly,
                SelectionStrategy::LoadBalanced,
                SelectionStrategy::ReputationAware,
            ] {
                let mut c = base.clone();
                c.selection.strategy = strategy;
                arms.push(arm(strategy.name(), c));
            }
        }
        Experiment::Exp5 => {
            let honest = base.total_nodes();
            for pct in [0usize, 10, 20, 30] {
                for weighting in [
                    VoteWeighting::Reputation,
                    VoteWeighting::PuzzleGated,
                    VoteWeighting::Stake,
                    VoteWeighting::Equal,
                ] {
                    let mut c = base.clone();
                    c.attack.sybil_count = honest * pct / 100;
                    c.consensus.weighting = weighting;
                    arms.push(arm(format!("sybil{pct}-{}", weighting.name()), c));
                }
            }
        }
        Experiment::Exp6 => {
            for alpha in [0.1, 0.3, 0.5, 1.0] {
                for kind in [AggregatorKind::RepFedavg, AggregatorKind::Fedavg] {
                    let mut c = base.clone();
                    c.task.dirichlet_alpha = alpha;
                    c.aggregation.kind = kind;
                    arms.push(arm(format!("alpha{alpha}-{}", kind.name()), c));
                }
            }
        }
        Experiment::Exp7 => {
            for n in [64usize, 128, 256, 512, 1024] {
                let mut c = base.clone();
                let n = n * scale;
                c.nodes.cpu_pool = n - c.nodes.gpu_pool.min(n);
                c.nodes.gpu_pool = c.nodes.gpu_pool.min(n);
                arms.push(arm(format!("n{n}"), c));
            }
        }
        Experiment::Exp8 => {
            let mut intra = base.clone();
            let m = intra.network.latency.intra_region_ms;
            intra.network.latency = LatencyModel {
                same_provider_ms: m,
                cross_provider_ms: m,
                ..intra.network.latency
            };
            arms.push(arm("intra_cloud", intra));
            arms.push(arm("cross_cloud", base.clone()));
        }
        Experiment::Exp9 => {
            for churn in [0.0, 0.1] {
                for strategy in [SelectionStrategy::ReputationAware, SelectionStrategy::Random] {
                    let mut c = base.clone();
                    c.network.churn_rate = churn;
                    c.selection.strategy = strategy;
                    arms.push(arm(format!("churn{churn}-{}", strategy.name()), c));
                }
            }
        }
        Experiment::Exp10 => arms.push(arm("reputation_dynamics", base)),
    }
    for a in &arms {
        a.config.validate()?;
    }
    Ok(arms)
}

/// Result of one (arm, seed) run.
#[derive(Debug, Clone)]
pub struct ArmRun {
    pub label: String,
    pub seed: u64,
    pub metrics: RunMetrics,
}

/// Runs every arm over seeds `0..seeds` in parallel.
pub fn run_experiment(exp: Experiment, scale: usize, seeds: u64) -> Result<Vec<ArmRun>> {
    run_arms(&experiment_arms(exp, scale)?, seeds)
}

/// Runs the given arms over seeds `0..seeds` in parallel, in arm-major order.
pub fn run_arms(arms: &[Arm], seeds: u64) -> Result<Vec<ArmRun>> {
    let jobs: Vec<(&Arm, u64)> = arms.iter().flat_map(|a| (0..seeds).map(move |s| (a, s))).collect();
    jobs.into_par_iter()
        .map(|(a, seed)| {
            let mut config = a.config.clone();
            config.seed = seed;
            Ok(ArmRun {
                label: a.label.clone(),
                seed,
                metrics: run_scenario(&config)?,
            })
        })
        .collect()
}
