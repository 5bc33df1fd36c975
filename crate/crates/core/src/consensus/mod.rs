//! Reputation-weighted BFT finalization with graduated quorums.
//!
//! A decision epoch freezes voter weights when the proposal is created. The
//! proposal commits once approving weight reaches the operation's quorum and
//! aborts as soon as the quorum is arithmetically out of reach.

pub mod fuzz;

pub use fuzz::{boundary_trial, safe_regime_trial, FuzzOutcome};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NexusError, Result};
use crate::reputation::{is_gated, BetaReputation, ReputationParams, Sensitivity};
use crate::rng::public_hash64;

/// Relative slack on quorum comparisons, absorbs float summation order.
pub const QUORUM_TOLERANCE: f64 = 1e-9;

/// Default size of the leader rotation.
pub const DEFAULT_LEADER_ROTATION: usize = 10;

/// Leader timeout before the first view change, in simulated seconds.
pub const BASE_VIEW_TIMEOUT_S: f64 = 5.0;

/// Latency added by the reputation-proof message round.
pub const REPUTATION_PROOF_OVERHEAD: f64 = 0.12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    FlRoundResult,
    ModelCheckpoint,
    ArchitectureChange,
    ProtocolUpdate,
}

impl OpClass {
    pub const ALL: [OpClass; 4] = [
        OpClass::FlRoundResult,
        OpClass::ModelCheckpoint,
        OpClass::ArchitectureChange,
        OpClass::ProtocolUpdate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OpClass::FlRoundResult => "fl_round_result",
            OpClass::ModelCheckpoint => "model_checkpoint",
            OpClass::ArchitectureChange => "architecture_change",
            OpClass::ProtocolUpdate => "protocol_update",
        }
    }

    pub fn sensitivity(&self) -> Sensitivity {
        Sensitivity::for_quorum(quorum_threshold(*self))
    }
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpClass {
    type Err = NexusError;

    fn from_str(s: &str) -> Result<Self> {
        OpClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| NexusError::UnknownOpClass(s.to_string()))
    }
}

/// Graduated quorum for each operation class.
pub fn quorum_threshold(op: OpClass) -> f64 {
    match op {
        OpClass::FlRoundResult => 0.67,
        OpClass::ModelCheckpoint => 0.75,
        OpClass::ArchitectureChange => 0.80,
        OpClass::ProtocolUpdate => 0.90,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub id: [u8; 32],
    pub op_class: OpClass,
    pub round: u64,
    /// Digest of the proposed content (model state root).
    pub digest: u64,
    pub proposer: usize,
    /// Fixed-weight epoch family this proposal is voted in.
    pub epoch: u64,
}

impl Proposal {
    pub fn new(op_class: OpClass, round: u64, digest: u64, proposer: usize, epoch: u64) -> Self {
        let mut h = Sha256::new();
        h.update([op_class as u8]);
        h.update(round.to_be_bytes());
        h.update(digest.to_be_bytes());
        h.update((proposer as u64).to_be_bytes());
        h.update(epoch.to_be_bytes());
        let id: [u8; 32] = h.finalize().into();
        Self {
            id,
            op_class,
            round,
            digest,
            proposer,
            epoch,
        }
    }

    pub fn short_id(&self) -> String {
        self.id[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn conflicts_with(&self, other: &Proposal) -> bool {
        self.round == other.round
            && self.op_class == other.op_class
            && self.epoch == other.epoch
            && self.digest != other.digest
    }
}

/// How voting weight is assigned when building a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteWeighting {
    /// Reputation score, restricted to eligible and ungated voters.
    Reputation,
    /// One vote per admitted identity.
    Equal,
    /// Fixed stake per identity.
    Stake,
    /// One vote per identity that has paid the admission puzzle.
    PuzzleGated,
}

impl VoteWeighting {
    pub fn name(&self) -> &'static str {
        match self {
            VoteWeighting::Reputation => "reputation",
            VoteWeighting::Equal => "equal",
            VoteWeighting::Stake => "stake",
            VoteWeighting::PuzzleGated => "puzzle_gated",
        }
    }
}

/// A prospective voter as seen at proposal creation.
#[derive(Debug, Clone, PartialEq)]
pub struct VoterInfo {
    pub node: usize,
    pub reputation: BetaReputation,
    /// Rounds since the identity joined.
    pub age_cycles: u64,
    pub stake: f64,
    /// Whether the identity has solved its admission puzzle.
    pub puzzle_solved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    weights: BTreeMap<usize, f64>,
    total: f64,
}

impl WeightSnapshot {
    pub fn from_weights(weights: BTreeMap<usize, f64>) -> Result<Self> {
        let weights: BTreeMap<usize, f64> = weights.into_iter().filter(|(_, w)| *w > 0.0).collect();
        let total: f64 = weights.values().sum();
        if weights.is_empty() || !(total > 0.0) {
            return Err(NexusError::EmptyEligibleSet);
        }
        Ok(Self { weights, total })
    }

    pub fn weight(&self, node: usize) -> Option<f64> {
        self.weights.get(&node).copied()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.weights.contains_key(&node)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().map(|(&n, &w)| (n, w))
    }
}

/// Freezes voter weights for one epoch.
///
/// Under `Reputation` weighting a voter is included when its score reaches
/// the eligibility floor and it is not gated for the class's sensitivity;
/// its weight is the score.
pub fn snapshot_weights(
    peers: &[VoterInfo],
    op_class: OpClass,
    params: &ReputationParams,
    weighting: VoteWeighting,
) -> Result<WeightSnapshot> {
    let sensitivity = op_class.sensitivity();
    let weights: BTreeMap<usize, f64> = peers
        .iter()
        .filter_map(|p| {
            let w = match weighting {
                VoteWeighting::Reputation => {
                    let r = p.reputation.score();
                    let eligible =
                        r >= params.eligibility_floor && !is_gated(&p.reputation, p.age_cycles, params, sensitivity);
                    eligible.then_some(r)
                }
                VoteWeighting::Equal => Some(1.0),
                VoteWeighting::Stake => Some(p.stake),
                VoteWeighting::PuzzleGated => p.puzzle_solved.then_some(1.0),
            }?;
            (w > 0.0).then_some((p.node, w))
        })
        .collect();
    WeightSnapshot::from_weights(weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochStatus {
    Pending,
    Committed,
    Aborted,
}

impl EpochStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, EpochStatus::Pending)
    }

    pub fn name(&self) -> &'static str {
        match self {
            EpochStatus::Pending => "pending",
            EpochStatus::Committed => "committed",
            EpochStatus::Aborted => "aborted",
        }
    }
}

/// Voting state of one proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochState {
    pub proposal: Proposal,
    pub snapshot: WeightSnapshot,
    pub quorum: f64,
    approvals: BTreeMap<usize, f64>,
    rejections: BTreeMap<usize, f64>,
    pub status: EpochStatus,
    pub view: u64,
    pub leader: usize,
    /// Ranked leader rotation fixed at epoch start.
    pub rotation: Vec<usize>,
    /// Votes refused because the voter is outside the snapshot.
    pub foreign_votes: Vec<usize>,
}

impl EpochState {
    pub fn new(proposal: Proposal, snapshot: WeightSnapshot, rotation: Vec<usize>) -> Self {
        let quorum = quorum_threshold(proposal.op_class);
        let leader = rotation
            .get((proposal.round % rotation.len().max(1) as u64) as usize)
            .copied()
            .unwrap_or(proposal.proposer);
        Self {
            proposal,
            snapshot,
            quorum,
            approvals: BTreeMap::new(),
            rejections: BTreeMap::new(),
            status: EpochStatus::Pending,
            view: 0,
            leader,
            rotation,
            foreign_votes: Vec::new(),
        }
    }

    pub fn approval_weight(&self) -> f64 {
        self.approvals.values().sum()
    }

    pub fn rejection_weight(&self) -> f64 {
        self.rejections.values().sum()
    }

    pub fn approvals(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.approvals.iter().map(|(&n, &w)| (n, w))
    }

    pub fn has_voted(&self, node: usize) -> bool {
        self.approvals.contains_key(&node) || self.rejections.contains_key(&node)
    }

    /// Records a vote and re-tallies. Votes after a terminal status, from
    /// outside the snapshot, or repeated votes are refused without changing
    /// the epoch.
    pub fn cast_vote(&mut self, node: usize, approve: bool) -> Result<EpochStatus> {
        if self.status.is_terminal() {
            return Err(NexusError::TerminalEpoch(self.status.name()));
        }
        let Some(weight) = self.snapshot.weight(node) else {
            self.foreign_votes.push(node);
            return Err(NexusError::UnknownVoter(node));
        };
        if self.has_voted(node) {
            return Err(NexusError::DuplicateVote(node));
        }
        if approve {
            self.approvals.insert(node, weight);
        } else {
            self.rejections.insert(node, weight);
        }
        self.status = tally(self);
        Ok(self.status)
    }
}

/// Commit when approvals reach `q_T W`; abort when approvals plus all uncast
/// weight can no longer reach it; otherwise pending.
pub fn tally(epoch: &EpochState) -> EpochStatus {
    if epoch.status.is_terminal() {
        return epoch.status;
    }
    let w = epoch.snapshot.total();
    let target = epoch.quorum * w - QUORUM_TOLERANCE * w;
    let approved = epoch.approval_weight();
    if approved >= target {
        return EpochStatus::Committed;
    }
    let uncast = w - approved - epoch.rejection_weight();
    if approved + uncast < target {
        return EpochStatus::Aborted;
    }
    EpochStatus::Pending
}

/// Leader candidate: node, reputation score, stable id hash.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderCandidate {
    pub node: usize,
    pub reputation: f64,
    pub id_hash: u64,
}

/// Top-`k_l` nodes by reputation, ties broken by id hash.
pub fn leader_rotation(candidates: &[LeaderCandidate], k_l: usize) -> Vec<usize> {
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|a, b| {
        b.reputation
            .total_cmp(&a.reputation)
            .then(public_hash64(&[a.id_hash]).cmp(&public_hash64(&[b.id_hash])))
            .then(a.node.cmp(&b.node))
    });
    ranked.truncate(k_l.max(1));
    ranked.into_iter().map(|c| c.node).collect()
}

/// `ranked[(round + view) mod min(k_l, count)]`.
pub fn elect_leader(candidates: &[LeaderCandidate], k_l: usize, round: u64, view: u64) -> Result<usize> {
    let rotation = leader_rotation(candidates, k_l);
    leader_from_rotation(&rotation, round, view)
}

pub fn leader_from_rotation(rotation: &[usize], round: u64, view: u64) -> Result<usize> {
    if rotation.is_empty() {
        return Err(NexusError::EmptyEligibleSet);
    }
    Ok(rotation[((round + view) % rotation.len() as u64) as usize])
}

/// Promotes the next leader after a leader timeout. Votes are kept: they
/// belong to the proposal, whose id is unchanged.
pub fn view_change(epoch: &mut EpochState, timeout_elapsed: bool) -> Result<()> {
    if epoch.status.is_terminal() {
        return Err(NexusError::TerminalEpoch(epoch.status.name()));
    }
    if timeout_elapsed {
        epoch.view += 1;
        epoch.leader = leader_from_rotation(&epoch.rotation, epoch.proposal.round, epoch.view)?;
    }
    Ok(())
}

/// Leader timeout for a given view: 5 s doubled per consecutive view change.
pub fn view_timeout_s(view: u64) -> f64 {
    BASE_VIEW_TIMEOUT_S * 2f64.powi(view.min(30) as i32)
}

/// Final state of one epoch, as kept in a run trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub proposal: Proposal,
    pub status: EpochStatus,
}

impl From<&EpochState> for EpochRecord {
    fn from(e: &EpochState) -> Self {
        Self {
            proposal: e.proposal.clone(),
            status: e.status,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SafetyVerdict {
    Safe,
    /// Two conflicting proposals committed in the same epoch family.
    Violation {
        first: Proposal,
        second: Proposal,
    },
}

impl SafetyVerdict {
    pub fn is_safe(&self) -> bool {
        matches!(self, SafetyVerdict::Safe)
    }
}

/// Trace oracle: flags any pair of committed, conflicting proposals.
pub fn check_safety(trace: &[EpochRecord]) -> SafetyVerdict {
    let mut committed: BTreeMap<(u64, OpClass, u64), &Proposal> = BTreeMap::new();
    for rec in trace.iter().filter(|r| r.status == EpochStatus::Committed) {
        let p = &rec.proposal;
        let key = (p.round, p.op_class, p.epoch);
        match committed.get(&key) {
            Some(prev) if prev.conflicts_with(p) => {
                return SafetyVerdict::Violation {
                    first: (*prev).clone(),
                    second: p.clone(),
                }
            }
            Some(_) => {}
            None => {
                committed.insert(key, p);
            }
        }
    }
    SafetyVerdict::Safe
}
