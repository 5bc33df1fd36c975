use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::adjudication::AdjudicationRecord;
use crate::adversary::{inject_sybils, AttackKind};
use crate::consensus::EpochRecord;
use crate::error::Result;
use crate::learner::{
    evaluate, generate_dataset, partition_dirichlet, split_holdout, DatasetSplits, Examples, ModelParams, PrivacyLedger,
};
use crate::network::{Network, RetentionStore};
use crate::reputation::{update, BetaReputation, DomainReputation};
use crate::rng::StreamFactory;
use crate::selection::{normalize_latency, score_candidate, CapabilityProfile};

/// Reputation domain of the simulated task.
pub const TASK_DOMAIN: &str = "vision";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Honest,
    /// Runs the configured attack when selected.
    Byzantine,
    /// Fresh identity created by the adversary.
    Sybil,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Honest => "honest",
            Role::Byzantine => "byzantine",
            Role::Sybil => "sybil",
        }
    }
}

/// Hardware facts about a node, as opposed to what a probe reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hardware {
    pub cap: f64,
    pub load: f64,
}

impl Hardware {
    /// Share of a top-end node's throughput this node delivers.
    pub fn speed(&self) -> f64 {
        (self.cap * (1.0 - self.load)).max(1e-3)
    }
}

/// Everything a run mutates, owned by the round scheduler.
#[derive(Debug, Clone)]
pub struct SimState {
    pub config: ScenarioConfig,
    pub factory: StreamFactory,
    pub net: Network,
    pub roles: Vec<Role>,
    pub hardware: Vec<Hardware>,
    pub reputations: Vec<DomainReputation>,
    /// Round each node joined; negative for warm-started history.
    pub joined: Vec<i64>,
    pub stakes: Vec<f64>,
    pub puzzle_solved: Vec<bool>,
    pub splits: DatasetSplits,
    /// Training shard per gpu-pool node.
    pub shards: Vec<Examples>,
    pub validation_shards: Vec<Examples>,
    pub global: ModelParams,
    pub global_val_acc: f64,
    pub ledger: PrivacyLedger,
    pub adjudications: Vec<AdjudicationRecord>,
    pub last_panel: BTreeMap<usize, Vec<usize>>,
    pub retention: RetentionStore<DomainReputation>,
    pub trace: Vec<EpochRecord>,
    pub next_epoch: u64,
    /// Per-node dissent log (vote != final outcome), for collusion scans.
    pub dissent: Vec<Vec<u8>>,
    pub timeout_s: f64,
}

fn draw_role_sets(config: &ScenarioConfig, factory: &StreamFactory) -> Vec<Role> {
    let n = config.nodes.gpu_pool + config.nodes.cpu_pool;
    let mut roles = vec![Role::Honest; n];
    let attacking = !matches!(config.attack.kind, AttackKind::None | AttackKind::Sybil);
    if attacking {
        let count = (config.attack.byzantine_fraction * config.nodes.gpu_pool as f64).round() as usize;
        let mut pool: Vec<usize> = (0..config.nodes.gpu_pool).collect();
        pool.shuffle(&mut factory.stream("roles", &[]));
        for &i in pool.iter().take(count) {
            roles[i] = Role::Byzantine;
        }
    }
    roles.extend(std::iter::repeat_n(Role::Sybil, config.attack.sybil_count));
    roles
}

impl SimState {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let config = config.clone();
        let factory = StreamFactory::new(config.seed);
        let honest_nodes = config.nodes.gpu_pool + config.nodes.cpu_pool;
        let r0 = config.reputation.r0;

        let roles = draw_role_sets(&config, &factory);
        let mut net = Network::generate(honest_nodes, config.network.k_dht, &factory, |_| r0);
        let sybils = inject_sybils(
            &mut net,
            config.attack.sybil_count,
            &mut factory.stream("sybils", &[]),
            |_| r0,
        );
        debug_assert_eq!(net.len(), roles.len());

        let total = roles.len();
        let mut hw_rng = factory.stream("hardware", &[]);
        let hardware = (0..total)
            .map(|_| Hardware {
                cap: hw_rng.random_range(config.selection.cap_min..=config.selection.cap_max),
                load: hw_rng.random_range(0.0..=config.selection.load_max),
            })
            .collect();

        let warm = config.nodes.warm_start_rounds;
        let honest_error = majority_error(&config);
        let reputations = (0..total)
            .map(|i| {
                let mut d = DomainReputation::new();
                let mut rep = config.reputation.fresh(TASK_DOMAIN);
                if roles[i] != Role::Sybil && warm > 0 {
                    let mut rng = factory.stream("warm-start", &[i as u64]);
                    for _ in 0..warm {
                        rep = update(&rep, !rng.random_bool(honest_error), &config.reputation);
                    }
                }
                d.set(rep);
                d
            })
            .collect();
        let joined = (0..total)
            .map(|i| if roles[i] == Role::Sybil { 0 } else { -(warm as i64) })
            .collect();

        let stakes = (0..total)
            .map(|i| match roles[i] {
                Role::Sybil => config.consensus.adversary_stake / sybils.len().max(1) as f64,
                _ => config.consensus.honest_stake,
            })
            .collect();
        let admitted = (config.consensus.puzzle_admit_fraction * sybils.len() as f64).round() as usize;
        let mut puzzle_solved = vec![true; total];
        let mut order = sybils.clone();
        order.shuffle(&mut factory.stream("puzzle", &[]));
        for &s in order.iter().skip(admitted) {
            puzzle_solved[s] = false;
        }

        let t = &config.task;
        let data = generate_dataset(
            t.classes,
            t.dim,
            t.examples,
            t.separation,
            factory.sub_seed("data", &[]),
        )?;
        let splits = split_holdout(&data, factory.sub_seed("split", &[]));
        let shards = partition_dirichlet(
            &splits.train,
            config.nodes.gpu_pool,
            t.dirichlet_alpha,
            factory.sub_seed("partition", &[]),
        )?;
        let validation_shards = splits.validation.chunks(config.adjudication.num_shards);
        let global = ModelParams::zeros(t.classes, t.dim);
        let global_val_acc = evaluate(&global, &splits.validation)?;

        let mut state = Self {
            dissent: vec![Vec::new(); total],
            retention: RetentionStore::new(config.reputation.cooldown_cycles),
            config,
            factory,
            net,
            roles,
            hardware,
            reputations,
            joined,
            stakes,
            puzzle_solved,
            splits,
            shards,
            validation_shards,
            global,
            global_val_acc,
            ledger: PrivacyLedger::new(),
            adjudications: Vec::new(),
            last_panel: BTreeMap::new(),
            trace: Vec::new(),
            next_epoch: 0,
            timeout_s: 0.0,
        };
        state.timeout_s = if state.config.timing.timeout_s > 0.0 {
            state.config.timing.timeout_s
        } else {
            state.config.timing.timeout_multiplier * state.warm_up_median_round_s()
        };
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn score(&self, node: usize) -> f64 {
        self.reputations[node].scalar(TASK_DOMAIN, &self.config.reputation)
    }

    pub fn task_reputation(&self, node: usize) -> BetaReputation {
        self.reputations[node].get_or_fresh(TASK_DOMAIN, &self.config.reputation)
    }

    pub fn age(&self, node: usize, round: u64) -> u64 {
        (round as i64 - self.joined[node]).max(0) as u64
    }

    pub fn is_alive(&self, node: usize) -> bool {
        self.net.peer(node).is_some_and(|p| p.alive)
    }

    pub fn is_trainer(&self, node: usize) -> bool {
        node < self.config.nodes.gpu_pool
    }

    /// Expected local-training duration without jitter.
    pub fn nominal_compute_s(&self, node: usize) -> f64 {
        let steps = self.config.dp.steps_for(self.shards[node].len()) as f64;
        steps * self.config.timing.step_seconds / self.hardware[node].speed()
    }

    pub fn median_rtt_ms(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return self.config.network.latency.loopback_ms;
        }
        let (ra, rb) = (self.net.peers()[a].region, self.net.peers()[b].region);
        self.config.network.latency.median_ms(ra, rb)
    }

    /// Probe-visible profile relative to the round initiator.
    pub fn true_profile(&self, node: usize, initiator: usize, round: u64) -> CapabilityProfile {
        let hw = self.hardware[node];
        let mut p = CapabilityProfile::new(hw.cap, hw.load, normalize_latency(self.median_rtt_ms(node, initiator)));
        p.verified_at = round;
        p
    }

    /// Round time of a benign warm-up round: the default selection picks
    /// `k_train` trainers at fresh reputation, and the round lasts until the
    /// slowest of them has trained and shipped its update to the first node.
    fn warm_up_median_round_s(&self) -> f64 {
        let r0 = self.config.reputation.r0;
        let weights = &self.config.selection.weights;
        let mut ranked: Vec<(f64, f64)> = (0..self.config.nodes.gpu_pool)
            .map(|i| {
                let score = score_candidate(&self.true_profile(i, 0, 0), r0, weights);
                let time = self.nominal_compute_s(i) + 2.0 * self.median_rtt_ms(i, 0) / 1000.0;
                (score, time)
            })
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        ranked
            .iter()
            .take(self.config.nodes.k_train.max(1))
            .map(|&(_, t)| t)
            .fold(0.0, f64::max)
    }

    pub fn role_nodes(&self, role: Role) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i] == role).collect()
    }
}

/// Probability that a majority of `m` equicorrelated evaluators errs.
pub fn majority_error(config: &ScenarioConfig) -> f64 {
    let (eta, rho, m) = (config.adjudication.eta, config.adjudication.rho, config.adjudication.m);
    let need = m / 2 + 1;
    let independent: f64 = (need..=m)
        .map(|k| binomial(m, k) * eta.powi(k as i32) * (1.0 - eta).powi((m - k) as i32))
        .sum();
    // The common-bit branch errs with probability eta.
    rho * eta + (1.0 - rho) * independent
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
