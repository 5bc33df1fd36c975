use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adjudication::NoiseModel;
use crate::adversary::AttackSpec;
use crate::aggregation::AggregatorKind;
use crate::consensus::{OpClass, VoteWeighting, DEFAULT_LEADER_ROTATION};
use crate::error::{NexusError, Result};
use crate::learner::DPConfig;
use crate::network::{GossipParams, LatencyModel, DEFAULT_K};
use crate::reputation::ReputationParams;
use crate::selection::{SelectionStrategy, SelectionWeights};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "NEXUS_SIM_SEED";

/// Full description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_rounds")]
    pub rounds: u64,
    #[serde(default)]
    pub nodes: NodesConfig,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub dp: DPConfig,
    #[serde(default)]
    pub reputation: ReputationParams,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub adjudication: AdjudicationConfig,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub aggregation: AggregationConfig,
    #[serde(default)]
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub timing: TimingConfig,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_rounds() -> u64 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodesConfig {
    /// Training-capable nodes; participants are selected from this pool.
    pub gpu_pool: usize,
    /// Nodes that only evaluate and vote.
    pub cpu_pool: usize,
    /// Participants per round.
    pub k_train: usize,
    /// Rounds of honest history every initial node starts with.
    pub warm_start_rounds: u64,
}

impl Default for NodesConfig {
    fn default() -> Self {
        Self {
            gpu_pool: 20,
            cpu_pool: 80,
            k_train: 10,
            warm_start_rounds: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub classes: usize,
    pub dim: usize,
    pub examples: usize,
    /// Minimum distance between class means.
    pub separation: f64,
    /// Dirichlet concentration of the label skew across trainers.
    pub dirichlet_alpha: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 20,
            examples: 8000,
            separation: 3.0,
            dirichlet_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub strategy: SelectionStrategy,
    pub weights: SelectionWeights,
    /// True capability of pool nodes is drawn uniformly from this range.
    pub cap_min: f64,
    pub cap_max: f64,
    /// Utilization is drawn uniformly from `[0, load_max]`.
    pub load_max: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            strategy: SelectionStrategy::ReputationAware,
            weights: SelectionWeights::default(),
            cap_min: 0.3,
            cap_max: 1.0,
            load_max: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdjudicationConfig {
    pub eta: f64,
    pub rho: f64,
    /// Evaluators per adjudication.
    pub m: usize,
    /// Public validation shards.
    pub num_shards: usize,
}

impl Default for AdjudicationConfig {
    fn default() -> Self {
        Self {
            eta: 0.15,
            rho: 0.22,
            m: 3,
            num_shards: 20,
        }
    }
}

impl AdjudicationConfig {
    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            eta: self.eta,
            rho: self.rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationConfig {
    pub kind: AggregatorKind,
    /// Byzantine count assumed by trimmed mean and Krum; defaults to the
    /// expected attackers among the round's participants.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub byzantine_bound: Option<usize>,
    /// Oracle arm: drop attacker updates before aggregating.
    pub exclude_attackers: bool,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            kind: AggregatorKind::RepFedavg,
            byzantine_bound: None,
            exclude_attackers: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusConfig {
    pub weighting: VoteWeighting,
    /// Operation class under which round results are finalized.
    pub op_class: OpClass,
    pub leader_rotation: usize,
    /// Per-round probability that the adversary submits its own proposal.
    pub adversarial_proposal_prob: f64,
    /// Fraction of Sybil identities that pay the admission puzzle.
    pub puzzle_admit_fraction: f64,
    /// Stake per honest identity.
    pub honest_stake: f64,
    /// Total stake the adversary spreads over its identities.
    pub adversary_stake: f64,
    /// Rounds between collusion scans; 0 disables scanning.
    pub collusion_scan_interval: u64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            weighting: VoteWeighting::Reputation,
            op_class: OpClass::FlRoundResult,
            leader_rotation: DEFAULT_LEADER_ROTATION,
            adversarial_proposal_prob: 0.0,
            puzzle_admit_fraction: 0.5,
            honest_stake: 1.0,
            adversary_stake: 10.0,
            collusion_scan_interval: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub k_dht: usize,
    pub lookup_alpha: usize,
    /// Random lookups sampled per round for the hop-count metric.
    pub lookups_per_round: usize,
    pub gossip: GossipParams,
    pub latency: LatencyModel,
    /// Fraction of nodes departing (and arriving) per simulated minute.
    pub churn_rate: f64,
    pub minutes_per_round: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            k_dht: DEFAULT_K,
            lookup_alpha: 3,
            lookups_per_round: 5,
            gossip: GossipParams::default(),
            latency: LatencyModel::default(),
            churn_rate: 0.0,
            minutes_per_round: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    /// Round deadline in simulated seconds; 0 derives it from a benign
    /// warm-up estimate.
    pub timeout_s: f64,
    /// Multiple of the warm-up median used when `timeout_s` is 0.
    pub timeout_multiplier: f64,
    /// Updates needed for a round to complete; 0 means `ceil(k_train / 2)`.
    pub min_updates: usize,
    /// Simulated seconds per local step on a fully available, top-end node.
    pub step_seconds: f64,
    /// Allowed drop in public-validation accuracy before a round counts as
    /// a regression.
    pub regression_tolerance: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            timeout_s: 0.0,
            timeout_multiplier: 3.0,
            min_updates: 0,
            step_seconds: 0.02,
            regression_tolerance: 0.01,
        }
    }
}

fn check(ok: bool, path: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(NexusError::config(path, message))
    }
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl ScenarioConfig {
    /// Defaults everywhere except the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            name: default_name(),
            seed,
            rounds: default_rounds(),
            nodes: NodesConfig::default(),
            task: TaskConfig::default(),
            dp: DPConfig::default(),
            reputation: ReputationParams::default(),
            selection: SelectionConfig::default(),
            adjudication: AdjudicationConfig::default(),
            attack: AttackSpec::default(),
            aggregation: AggregationConfig::default(),
            consensus: ConsensusConfig::default(),
            network: NetworkConfig::default(),
            timing: TimingConfig::default(),
        }
    }

    /// Parses TOML; unknown keys and type errors name the offending path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| NexusError::config("<root>", e.to_string()))?;
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." || path.is_empty() {
                "<root>".to_string()
            } else {
                path
            };
            NexusError::config(path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NexusError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| NexusError::InvalidArgument(e.to_string()))
    }

    /// Applies the seed override from the environment, if set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| NexusError::config(SEED_ENV, format!("not an unsigned integer: {v:?}")))?;
        }
        Ok(())
    }

    pub fn total_nodes(&self) -> usize {
        self.nodes.gpu_pool + self.nodes.cpu_pool + self.attack.sybil_count
    }

    pub fn min_updates(&self) -> usize {
        if self.timing.min_updates == 0 {
            self.nodes.k_train.div_ceil(2)
        } else {
            self.timing.min_updates
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.nodes;
        check(n.gpu_pool >= 1, "nodes.gpu_pool", "must be >= 1")?;
        check(n.k_train >= 1, "nodes.k_train", "must be >= 1")?;
        check(
            n.k_train <= n.gpu_pool,
            "nodes.k_train",
            "must not exceed nodes.gpu_pool",
        )?;
        check(
            self.timing.min_updates <= n.k_train,
            "timing.min_updates",
            "must not exceed nodes.k_train",
        )?;

        let t = &self.task;
        check(t.classes >= 2, "task.classes", "must be >= 2")?;
        check(t.dim >= 1, "task.dim", "must be >= 1")?;
        check(
            t.separation.is_finite() && t.separation >= 0.0,
            "task.separation",
            "must be finite and >= 0",
        )?;
        check(t.dirichlet_alpha > 0.0, "task.dirichlet_alpha", "must be positive")?;
        // The trainer shards come from the 70% training split.
        check(
            t.examples * 7 / 10 >= n.gpu_pool,
            "task.examples",
            "too few examples for one per trainer",
        )?;

        self.dp.validate()?;
        self.reputation.validate()?;
        self.selection.weights.validate()?;
        let s = &self.selection;
        check(
            unit(s.cap_min) && unit(s.cap_max) && s.cap_min <= s.cap_max && s.cap_max > 0.0,
            "selection.cap_min",
            "need 0 <= cap_min <= cap_max <= 1 with cap_max > 0",
        )?;
        check(
            s.load_max >= 0.0 && s.load_max < 1.0,
            "selection.load_max",
            "must be in [0, 1)",
        )?;

        let a = &self.adjudication;
        check(unit(a.eta) && a.eta <= 0.5, "adjudication.eta", "must be in [0, 0.5]")?;
        check((0.0..1.0).contains(&a.rho), "adjudication.rho", "must be in [0, 1)")?;
        check(a.m >= 3 && a.m % 2 == 1, "adjudication.m", "must be odd and >= 3")?;
        check(
            a.num_shards >= a.m,
            "adjudication.num_shards",
            "must be >= adjudication.m",
        )?;
        check(
            t.examples / 10 >= a.num_shards,
            "adjudication.num_shards",
            "more shards than validation examples",
        )?;

        self.attack
            .validate()
            .map_err(|e| NexusError::config("attack", e.to_string()))?;

        let c = &self.consensus;
        check(c.leader_rotation >= 1, "consensus.leader_rotation", "must be >= 1")?;
        check(
            unit(c.adversarial_proposal_prob),
            "consensus.adversarial_proposal_prob",
            "must be in [0, 1]",
        )?;
        check(
            unit(c.puzzle_admit_fraction),
            "consensus.puzzle_admit_fraction",
            "must be in [0, 1]",
        )?;
        check(c.honest_stake > 0.0, "consensus.honest_stake", "must be positive")?;
        check(c.adversary_stake >= 0.0, "consensus.adversary_stake", "must be >= 0")?;

        let net = &self.network;
        check(net.k_dht >= 1, "network.k_dht", "must be >= 1")?;
        check(net.lookup_alpha >= 1, "network.lookup_alpha", "must be >= 1")?;
        check(
            net.churn_rate.is_finite() && net.churn_rate >= 0.0,
            "network.churn_rate",
            "must be >= 0",
        )?;
        check(
            net.minutes_per_round > 0.0,
            "network.minutes_per_round",
            "must be positive",
        )?;
        net.latency
            .validate()
            .map_err(|e| NexusError::config("network.latency", e.to_string()))?;

        let tm = &self.timing;
        check(
            tm.timeout_s.is_finite() && tm.timeout_s >= 0.0,
            "timing.timeout_s",
            "must be >= 0",
        )?;
        check(
            tm.timeout_multiplier > 0.0,
            "timing.timeout_multiplier",
            "must be positive",
        )?;
        check(tm.step_seconds > 0.0, "timing.step_seconds", "must be positive")?;
        check(
            tm.regression_tolerance.is_finite() && tm.regression_tolerance >= 0.0,
            "timing.regression_tolerance",
            "must be >= 0",
        )?;
        Ok(())
    }
}
