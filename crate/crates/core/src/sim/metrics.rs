use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::state::{Role, SimState, TASK_DOMAIN};
use crate::aggregation::{ConsensusEvent, ProposalKind, RoundResult};
use crate::error::Result;

/// Mean and quartiles of one role's scores; all `None` when the role is empty.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoleStats {
    pub mean: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

impl RoleStats {
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut s = scores.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            mean: (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64),
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
        }
    }
}

/// One line of `rounds.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: u64,
    pub success: bool,
    pub within_timeout: bool,
    pub enough_updates: bool,
    pub quorum_approved: bool,
    pub no_regression: bool,
    pub outcome: String,
    pub participants: usize,
    pub delivered: usize,
    pub val_acc_before: f64,
    pub val_acc_after: f64,
    pub test_acc: f64,
    pub round_time_s: f64,
    pub consensus_latency_s: Option<f64>,
    pub epsilon: f64,
    pub honest_mean: Option<f64>,
    pub honest_q1: Option<f64>,
    pub honest_median: Option<f64>,
    pub honest_q3: Option<f64>,
    pub byzantine_mean: Option<f64>,
    pub byzantine_q1: Option<f64>,
    pub byzantine_median: Option<f64>,
    pub byzantine_q3: Option<f64>,
    pub sybil_mean: Option<f64>,
    pub sybil_q1: Option<f64>,
    pub sybil_median: Option<f64>,
    pub sybil_q3: Option<f64>,
}

impl RoundRow {
    pub fn role_stats(&self, role: Role) -> RoleStats {
        match role {
            Role::Honest => RoleStats {
                mean: self.honest_mean,
                q1: self.honest_q1,
                median: self.honest_median,
                q3: self.honest_q3,
            },
            Role::Byzantine => RoleStats {
                mean: self.byzantine_mean,
                q1: self.byzantine_q1,
                median: self.byzantine_median,
                q3: self.byzantine_q3,
            },
            Role::Sybil => RoleStats {
                mean: self.sybil_mean,
                q1: self.sybil_q1,
                median: self.sybil_median,
                q3: self.sybil_q3,
            },
        }
    }
}

/// One line of `reputation.csv`: a node's state after a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationRow {
    pub round: u64,
    pub node: usize,
    pub role: Role,
    pub alive: bool,
    pub score: f64,
    pub uncertainty: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// One line of `consensus.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRow {
    pub round: u64,
    pub epoch: u64,
    pub proposal_kind: String,
    pub op_class: String,
    pub quorum: f64,
    pub total_weight: f64,
    pub approval_weight: f64,
    pub status: String,
    pub views: u64,
    pub latency_s: f64,
    pub oracle_commit: bool,
    pub correct: bool,
}

impl From<&ConsensusEvent> for ConsensusRow {
    fn from(e: &ConsensusEvent) -> Self {
        Self {
            round: e.round,
            epoch: e.epoch,
            proposal_kind: e.kind.name().to_string(),
            op_class: e.op_class.name().to_string(),
            quorum: e.quorum,
            total_weight: e.total_weight,
            approval_weight: e.approval_weight,
            status: e.status.name().to_string(),
            views: e.views,
            latency_s: e.latency_s,
            oracle_commit: e.oracle_commit,
            correct: e.correct(),
        }
    }
}

/// One line of `network.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRow {
    pub round: u64,
    pub alive: usize,
    pub departures: usize,
    pub arrivals: usize,
    pub gossip_coverage_r1: f64,
    pub gossip_coverage_r2: f64,
    pub gossip_coverage_r3: f64,
    pub gossip_final: f64,
    pub gossip_rounds_to_99: Option<usize>,
    pub gossip_messages: usize,
    pub queue_drops: usize,
    pub lookup_hops_mean: f64,
}

/// Per-round time series of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub name: String,
    pub seed: u64,
    pub rounds: Vec<RoundRow>,
    pub reputation: Vec<ReputationRow>,
    pub consensus: Vec<ConsensusRow>,
    pub network: Vec<NetworkRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl RunMetrics {
    pub(crate) fn record(&mut self, state: &SimState, result: &RoundResult) {
        let round = result.round;
        let stats = |role: Role| {
            let scores: Vec<f64> = (0..state.len())
                .filter(|&i| state.roles[i] == role)
                .map(|i| state.score(i))
                .collect();
            RoleStats::from_scores(&scores)
        };
        let (h, b, s) = (stats(Role::Honest), stats(Role::Byzantine), stats(Role::Sybil));
        let consensus_latency_s = result
            .consensus
            .iter()
            .find(|e| e.kind == ProposalKind::Honest)
            .map(|e| e.latency_s);
        let dp = &state.config.dp;
        self.rounds.push(RoundRow {
            round,
            success: result.success,
            within_timeout: result.checks.within_timeout,
            enough_updates: result.checks.enough_updates,
            quorum_approved: result.checks.quorum_approved,
            no_regression: result.checks.no_regression,
            outcome: result.outcome.name().to_string(),
            participants: result.participants.len(),
            delivered: result.delivered,
            val_acc_before: result.val_acc_before,
            val_acc_after: result.val_acc_after,
            test_acc: result.test_acc,
            round_time_s: result.round_time_s,
            consensus_latency_s,
            epsilon: state.ledger.worst_epsilon(dp.noise_multiplier, dp.delta),
            honest_mean: h.mean,
            honest_q1: h.q1,
            honest_median: h.median,
            honest_q3: h.q3,
            byzantine_mean: b.mean,
            byzantine_q1: b.q1,
            byzantine_median: b.median,
            byzantine_q3: b.q3,
            sybil_mean: s.mean,
            sybil_q1: s.q1,
            sybil_median: s.median,
            sybil_q3: s.q3,
        });
        for node in 0..state.len() {
            let rep = state.task_reputation(node);
            self.reputation.push(ReputationRow {
                round,
                node,
                role: state.roles[node],
                alive: state.is_alive(node),
                score: rep.score(),
                uncertainty: rep.uncertainty(),
                alpha: rep.alpha,
                beta: rep.beta,
            });
        }
        self.consensus.extend(result.consensus.iter().map(ConsensusRow::from));
        let cov = &result.network.coverage;
        let at = |r: usize| cov.get(r).or(cov.last()).copied().unwrap_or(0.0);
        self.network.push(NetworkRow {
            round,
            alive: result.network.alive,
            departures: result.network.departures,
            arrivals: result.network.arrivals,
            gossip_coverage_r1: at(1),
            gossip_coverage_r2: at(2),
            gossip_coverage_r3: at(3),
            gossip_final: cov.last().copied().unwrap_or(0.0),
            gossip_rounds_to_99: cov.iter().position(|&c| c >= 0.99),
            gossip_messages: result.network.gossip_messages,
            queue_drops: result.network.queue_drops,
            lookup_hops_mean: result.network.lookup_hops_mean,
        });
        debug_assert!(state.reputations.iter().all(|d| d.get(TASK_DOMAIN).is_some()));
    }

    /// Fraction of scheduled rounds meeting all four success conditions.
    pub fn success_rate(&self) -> Option<f64> {
        mean(self.rounds.iter().map(|r| f64::from(u8::from(r.success))))
    }

    /// Fraction of consensus decisions matching the accuracy oracle; absent
    /// when the run made no decisions.
    pub fn validation_correctness(&self) -> Option<f64> {
        mean(self.consensus.iter().map(|c| f64::from(u8::from(c.correct))))
    }

    pub fn final_test_acc(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.test_acc)
    }

    pub fn final_val_acc(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.val_acc_after)
    }

    pub fn final_epsilon(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.epsilon)
    }

    pub fn mean_consensus_latency_s(&self) -> Option<f64> {
        mean(self.rounds.iter().filter_map(|r| r.consensus_latency_s))
    }

    /// 95th percentile of simulated round time.
    pub fn p95_round_time_s(&self) -> Option<f64> {
        let mut t: Vec<f64> = self.rounds.iter().map(|r| r.round_time_s).collect();
        t.sort_by(f64::total_cmp);
        quantile(&t, 0.95)
    }

    pub fn mean_lookup_hops(&self) -> Option<f64> {
        mean(self.network.iter().map(|n| n.lookup_hops_mean))
    }

    /// Scores of all nodes with `role` after `round`.
    pub fn role_scores(&self, round: u64, role: Role) -> Vec<f64> {
        self.reputation
            .iter()
            .filter(|r| r.round == round && r.role == role)
            .map(|r| r.score)
            .collect()
    }

    /// Headline metrics as `key: value` lines.
    pub fn summary(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        let mut out = String::new();
        let last = self.rounds.last();
        let lines: [(&str, String); 13] = [
            ("name", self.name.clone()),
            ("seed", self.seed.to_string()),
            ("rounds", self.rounds.len().to_string()),
            ("success_rate", fmt(self.success_rate())),
            ("validation_correctness", fmt(self.validation_correctness())),
            ("final_val_acc", fmt(self.final_val_acc())),
            ("final_test_acc", fmt(self.final_test_acc())),
            ("final_epsilon", fmt(self.final_epsilon())),
            ("mean_consensus_latency_s", fmt(self.mean_consensus_latency_s())),
            ("p95_round_time_s", fmt(self.p95_round_time_s())),
            ("mean_lookup_hops", fmt(self.mean_lookup_hops())),
            ("final_honest_median", fmt(last.and_then(|r| r.honest_median))),
            ("final_byzantine_median", fmt(last.and_then(|r| r.byzantine_median))),
        ];
        for (k, v) in lines {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }

    /// Writes the four CSV files and `summary.txt` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_csv::<RoundRow>(&dir.join("rounds.csv"), &self.rounds)?;
        write_csv::<ReputationRow>(&dir.join("reputation.csv"), &self.reputation)?;
        write_csv::<ConsensusRow>(&dir.join("consensus.csv"), &self.consensus)?;
        write_csv::<NetworkRow>(&dir.join("network.csv"), &self.network)?;
        fs::write(dir.join("summary.txt"), self.summary())?;
        Ok(())
    }
}

/// Column names of a CSV row type, used for header-only files.
pub trait HeaderOf {
    const HEADER: &'static [&'static str];
}

impl HeaderOf for RoundRow {
    const HEADER: &'static [&'static str] = &[
        "round",
        "success",
        "within_timeout",
        "enough_updates",
        "quorum_approved",
        "no_regression",
        "outcome",
        "participants",
        "delivered",
        "val_acc_before",
        "val_acc_after",
        "test_acc",
        "round_time_s",
        "consensus_latency_s",
        "epsilon",
        "honest_mean",
        "honest_q1",
        "honest_median",
        "honest_q3",
        "byzantine_mean",
        "byzantine_q1",
        "byzantine_median",
        "byzantine_q3",
        "sybil_mean",
        "sybil_q1",
        "sybil_median",
        "sybil_q3",
    ];
}

impl HeaderOf for ReputationRow {
    const HEADER: &'static [&'static str] = &[
        "round",
        "node",
        "role",
        "alive",
        "score",
        "uncertainty",
        "alpha",
        "beta",
    ];
}

impl HeaderOf for ConsensusRow {
    const HEADER: &'static [&'static str] = &[
        "round",
        "epoch",
        "proposal_kind",
        "op_class",
        "quorum",
        "total_weight",
        "approval_weight",
        "status",
        "views",
        "latency_s",
        "oracle_commit",
        "correct",
    ];
}

impl HeaderOf for NetworkRow {
    const HEADER: &'static [&'static str] = &[
        "round",
        "alive",
        "departures",
        "arrivals",
        "gossip_coverage_r1",
        "gossip_coverage_r2",
        "gossip_coverage_r3",
        "gossip_final",
        "gossip_rounds_to_99",
        "gossip_messages",
        "queue_drops",
        "lookup_hops_mean",
    ];
}

/// Writes rows; an empty table still gets its header line.
fn write_csv<T: Serialize + HeaderOf>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(!rows.is_empty())
        .from_path(path)?;
    if rows.is_empty() {
        w.write_record(T::HEADER)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
