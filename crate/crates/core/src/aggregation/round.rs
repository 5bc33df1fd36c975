//! One federated round: select, train, collect, aggregate, finalize,
//! adjudicate, update reputation.

use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate, AggregatorKind, UpdateDelta};
use crate::adjudication::{
    adjudicate, assign_shards, judge_update, sample_errors, select_evaluators, AdjudicationRecord, EvaluatorCandidate,
    EvaluatorVote,
};
use crate::adversary::{
    alie_attack, backdoor_poison, farming_active, gradient_flip, l2_norm, random_direction, unreliable_behavior,
    AttackKind, UnreliableAction,
};
use crate::consensus::{
    leader_rotation, quorum_threshold, snapshot_weights, view_timeout_s, EpochRecord, EpochState, EpochStatus,
    LeaderCandidate, OpClass, Proposal, VoteWeighting, VoterInfo, REPUTATION_PROOF_OVERHEAD,
};
use crate::error::{NexusError, Result};
use crate::learner::{evaluate, local_train_dpsgd, ModelParams};
use crate::network::{churn_step, gossip_broadcast, sample_latency, Endpoint};
use crate::reputation::{collusion_penalty_targets, collusion_scan};
use crate::rng::public_hash64;
use crate::selection::{probe_capability, select_with_strategy, Candidate, ProbeTarget};
use crate::sim::{Role, SimState, TASK_DOMAIN};

/// The four conditions a round must meet to count as successful, kept
/// separately so the conjunction can be audited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SuccessChecks {
    pub within_timeout: bool,
    pub enough_updates: bool,
    pub quorum_approved: bool,
    pub no_regression: bool,
}

impl SuccessChecks {
    pub fn all(&self) -> bool {
        self.within_timeout && self.enough_updates && self.quorum_approved && self.no_regression
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundOutcome {
    Committed,
    Rejected,
    InsufficientUpdates,
    EmptyPool,
    NoTrustedMass,
}

impl RoundOutcome {
    pub fn name(&self) -> &'static str {
        match self {
            RoundOutcome::Committed => "committed",
            RoundOutcome::Rejected => "rejected",
            RoundOutcome::InsufficientUpdates => "insufficient_updates",
            RoundOutcome::EmptyPool => "empty_pool",
            RoundOutcome::NoTrustedMass => "no_trusted_mass",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// The round's aggregate, proposed by the round leader.
    Honest,
    /// A poisoned checkpoint submitted by the adversary.
    Adversarial,
}

impl ProposalKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProposalKind::Honest => "honest",
            ProposalKind::Adversarial => "adversarial",
        }
    }
}

/// One finalized decision epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusEvent {
    pub round: u64,
    pub epoch: u64,
    pub kind: ProposalKind,
    pub op_class: OpClass,
    pub quorum: f64,
    pub total_weight: f64,
    pub approval_weight: f64,
    pub status: EpochStatus,
    pub views: u64,
    pub latency_s: f64,
    /// Whether the accuracy oracle says the proposal should commit.
    pub oracle_commit: bool,
}

impl ConsensusEvent {
    pub fn committed(&self) -> bool {
        self.status == EpochStatus::Committed
    }

    pub fn correct(&self) -> bool {
        self.committed() == self.oracle_commit
    }
}

/// Overlay measurements taken during a round.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NetworkSample {
    pub alive: usize,
    pub departures: usize,
    pub arrivals: usize,
    /// Gossip coverage after each gossip round, starting at round 0.
    pub coverage: Vec<f64>,
    pub gossip_messages: usize,
    pub queue_drops: usize,
    pub lookup_hops_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub round: u64,
    pub success: bool,
    pub checks: SuccessChecks,
    pub outcome: RoundOutcome,
    /// Present iff the round aggregate was committed.
    pub accepted_model: Option<ModelParams>,
    pub participants: Vec<usize>,
    pub delivered: usize,
    /// Adjudicated outcome per participant, present only after a commit.
    pub node_outcomes: Vec<(usize, bool)>,
    pub val_acc_before: f64,
    pub val_acc_after: f64,
    pub test_acc: f64,
    /// Simulated seconds from round start to finalization.
    pub round_time_s: f64,
    pub consensus: Vec<ConsensusEvent>,
    pub network: NetworkSample,
}

/// A participant's contribution as it reaches the aggregator.
#[derive(Debug, Clone)]
struct Submission {
    update: UpdateDelta,
    steps: usize,
    sample_rate: f64,
    arrival_s: f64,
    dropped: bool,
}

fn byzantine_voter(state: &SimState, node: usize, round: u64) -> bool {
    if state.roles[node] != Role::Byzantine {
        return false;
    }
    match state.config.attack.kind {
        AttackKind::None | AttackKind::Unreliable | AttackKind::Sybil => false,
        AttackKind::Farming => farming_active(&state.config.attack, round),
        _ => true,
    }
}

fn endpoint(state: &SimState, node: usize) -> Endpoint {
    Endpoint {
        node,
        region: state.net.peers()[node].region,
    }
}

fn local_work(state: &SimState, node: usize, round: u64, initiator: usize) -> Result<Submission> {
    let cfg = &state.config;
    let spec = &cfg.attack;
    let mut rng = state.factory.stream("train", &[round, node as u64]);
    let attacker = state.roles[node] == Role::Byzantine;

    let shard = if attacker && spec.kind == AttackKind::Backdoor {
        Cow::Owned(backdoor_poison(&state.shards[node], spec, &mut rng)?)
    } else {
        Cow::Borrowed(&state.shards[node])
    };
    let trained = local_train_dpsgd(&state.global, &shard, &cfg.dp, &mut rng)?;
    let mut update = UpdateDelta {
        node,
        delta: trained.model.minus(&state.global)?,
        n_k: shard.len(),
    };
    if attacker {
        match spec.kind {
            AttackKind::GradientFlip => update = gradient_flip(&update),
            AttackKind::Farming if farming_active(spec, round) => update = gradient_flip(&update),
            AttackKind::Unreliable
                if unreliable_behavior(spec.failure_prob, &mut rng)? == UnreliableAction::Garbage =>
            {
                let norm = l2_norm(&update.delta);
                update.delta = random_direction(update.delta.len(), norm, &mut rng);
            }
            _ => {}
        }
    }

    let sigma = (1.0 + 0.2f64 * 0.2).ln().sqrt();
    let jitter = LogNormal::new(0.0, sigma).map(|d| d.sample(&mut rng)).unwrap_or(1.0);
    let compute_s = state.nominal_compute_s(node) * jitter;
    let rtt_ms = sample_latency(
        &cfg.network.latency,
        endpoint(state, node),
        endpoint(state, initiator),
        &mut rng,
    );
    let arrival_s = compute_s + 2.0 * rtt_ms / 1000.0;
    let rate = cfg.network.churn_rate;
    let dropped = rate > 0.0 && rng.random_bool(1.0 - (-rate * arrival_s / 60.0).exp());
    Ok(Submission {
        sample_rate: (cfg.dp.batch_size as f64 / shard.len() as f64).min(1.0),
        update,
        steps: trained.steps,
        arrival_s,
        dropped,
    })
}

fn apply_churn(state: &mut SimState, round: u64) -> Result<(usize, usize)> {
    let rate = state.config.network.churn_rate;
    if rate == 0.0 {
        return Ok((0, 0));
    }
    let mut rng = state.factory.stream("churn", &[round]);
    let alive = state.net.alive();
    let events = churn_step(&alive, rate, state.config.network.minutes_per_round, &mut rng)?;
    for &d in &events.departures {
        state.net.depart(d);
        state.retention.depart(d, round, state.reputations[d].clone());
    }
    let mut away: Vec<usize> = state
        .retention
        .departed()
        .filter(|n| !events.departures.contains(n))
        .collect();
    away.shuffle(&mut rng);
    let returning: Vec<usize> = away.into_iter().take(events.arrivals).collect();
    for &node in &returning {
        match state.retention.rejoin(node, round) {
            Some(rep) => state.reputations[node] = rep,
            None => {
                let mut fresh = crate::reputation::DomainReputation::new();
                fresh.set(state.config.reputation.fresh(TASK_DOMAIN));
                state.reputations[node] = fresh;
                state.joined[node] = round as i64;
            }
        }
    }
    let scores: Vec<f64> = (0..state.len()).map(|i| state.score(i)).collect();
    for &node in &returning {
        state.net.join(node, |j| scores[j])?;
    }
    Ok((events.departures.len(), returning.len()))
}

/// Poisoned checkpoint: class rows of the current model rotated by one.
fn adversarial_checkpoint(global: &ModelParams) -> ModelParams {
    let (c, d) = (global.classes, global.dim);
    let mut out = global.clone();
    for k in 0..c {
        let src = (k + 1) % c;
        out.values[k * d..(k + 1) * d].copy_from_slice(&global.values[src * d..(src + 1) * d]);
        out.values[c * d + k] = global.values[c * d + src];
    }
    out
}

fn model_digest(model: &ModelParams) -> u64 {
    let bits: Vec<u64> = model.values.iter().map(|v| v.to_bits()).collect();
    public_hash64(&bits)
}

/// Runs one decision epoch for `candidate` and records it in the trace.
fn finalize(
    state: &mut SimState,
    round: u64,
    candidate: &ModelParams,
    kind: ProposalKind,
    rotation: &[usize],
) -> Result<ConsensusEvent> {
    let cfg = state.config.clone();
    let op = cfg.consensus.op_class;
    let epoch_id = state.next_epoch;
    state.next_epoch += 1;
    let mut rng = state.factory.stream("votes", &[round, epoch_id]);

    let candidate_acc = evaluate(candidate, &state.splits.validation)?;
    let oracle_commit = candidate_acc >= state.global_val_acc - cfg.timing.regression_tolerance;

    let alive = state.net.alive();
    let voters: Vec<VoterInfo> = alive
        .iter()
        .map(|&n| VoterInfo {
            node: n,
            reputation: state.task_reputation(n),
            age_cycles: state.age(n, round),
            stake: state.stakes[n],
            puzzle_solved: state.puzzle_solved[n],
        })
        .collect();

    // Leaders that would withhold an honest proposal force view changes.
    let mut views = 0u64;
    let mut timeouts_s = 0.0;
    let hostile = |n: usize| byzantine_voter(state, n, round) || state.roles[n] == Role::Sybil;
    let mut leader = rotation[(round as usize) % rotation.len()];
    while kind == ProposalKind::Honest && hostile(leader) && (views as usize) < rotation.len() {
        timeouts_s += view_timeout_s(views);
        views += 1;
        leader = rotation[((round + views) as usize) % rotation.len()];
    }
    let proposer = if kind == ProposalKind::Honest {
        leader
    } else {
        state.role_nodes(Role::Sybil).first().copied().unwrap_or(leader)
    };
    let proposal = Proposal::new(op, round, model_digest(candidate), proposer, epoch_id);

    let snapshot = match snapshot_weights(&voters, op, &cfg.reputation, cfg.consensus.weighting) {
        Ok(s) => s,
        Err(NexusError::EmptyEligibleSet) => {
            state.trace.push(EpochRecord {
                proposal,
                status: EpochStatus::Aborted,
            });
            for d in state.dissent.iter_mut() {
                d.push(0);
            }
            return Ok(ConsensusEvent {
                round,
                epoch: epoch_id,
                kind,
                op_class: op,
                quorum: quorum_threshold(op),
                total_weight: 0.0,
                approval_weight: 0.0,
                status: EpochStatus::Aborted,
                views,
                latency_s: timeouts_s,
                oracle_commit,
            });
        }
        Err(e) => return Err(e),
    };

    let members: Vec<usize> = snapshot.iter().map(|(n, _)| n).collect();
    let errors = sample_errors(&cfg.adjudication.noise(), members.len(), &mut rng);
    let mut ballots: Vec<(f64, usize, bool)> = members
        .iter()
        .zip(errors)
        .map(|(&n, err)| {
            let approve = if state.roles[n] == Role::Sybil {
                kind == ProposalKind::Adversarial
            } else if byzantine_voter(state, n, round) {
                true
            } else {
                oracle_commit ^ err
            };
            let rtt = sample_latency(
                &cfg.network.latency,
                endpoint(state, leader),
                endpoint(state, n),
                &mut rng,
            );
            (rtt, n, approve)
        })
        .collect();
    ballots.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut epoch = EpochState::new(proposal, snapshot, rotation.to_vec());
    epoch.view = views;
    epoch.leader = leader;
    let mut deciding_rtt = 0.0;
    let mut cast: Vec<(usize, bool)> = Vec::with_capacity(ballots.len());
    for &(rtt, n, approve) in &ballots {
        let status = epoch.cast_vote(n, approve)?;
        cast.push((n, approve));
        if status.is_terminal() {
            deciding_rtt = rtt;
            break;
        }
    }
    let committed = epoch.status == EpochStatus::Committed;
    let mut dissent = vec![0u8; state.len()];
    for (n, approve) in cast {
        dissent[n] = u8::from(approve != committed);
    }
    for (d, bit) in state.dissent.iter_mut().zip(dissent) {
        d.push(bit);
    }

    let proof = if cfg.consensus.weighting == VoteWeighting::Reputation {
        1.0 + REPUTATION_PROOF_OVERHEAD
    } else {
        1.0
    };
    let event = ConsensusEvent {
        round,
        epoch: epoch_id,
        kind,
        op_class: op,
        quorum: epoch.quorum,
        total_weight: epoch.snapshot.total(),
        approval_weight: epoch.approval_weight(),
        status: epoch.status,
        views,
        latency_s: timeouts_s + 2.0 * deciding_rtt / 1000.0 * proof,
        oracle_commit,
    };
    state.trace.push(EpochRecord::from(&epoch));
    if committed {
        state.global = candidate.clone();
        state.global_val_acc = candidate_acc;
    }
    Ok(event)
}

/// Adjudicates every participant against the pre-round model and applies
/// the reputation updates.
/// Participant, outcome, adjudication record (if judged), evaluator panel.
type Judgement = (usize, bool, Option<AdjudicationRecord>, Vec<usize>);

fn adjudicate_participants(
    state: &mut SimState,
    round: u64,
    global_before: &ModelParams,
    participants: &[usize],
    delivered: &[UpdateDelta],
) -> Result<Vec<(usize, bool)>> {
    let cfg = state.config.clone();
    let floor = cfg.reputation.eligibility_floor;
    let alive = state.net.alive();
    let region = |n: usize| state.net.peers()[n].region.index() as u16;
    let mut pool: Vec<EvaluatorCandidate> = alive
        .iter()
        .filter(|n| !participants.contains(n) && state.score(**n) >= floor)
        .map(|&n| EvaluatorCandidate {
            node: n,
            region: region(n),
        })
        .collect();
    if pool.len() < cfg.adjudication.m {
        pool = alive
            .iter()
            .filter(|n| !participants.contains(n))
            .map(|&n| EvaluatorCandidate {
                node: n,
                region: region(n),
            })
            .collect();
    }
    if pool.len() < cfg.adjudication.m {
        // Everyone trained this round: evaluate each node with all others.
        pool = alive
            .iter()
            .map(|&n| EvaluatorCandidate {
                node: n,
                region: region(n),
            })
            .collect();
    }

    let noise = cfg.adjudication.noise();
    let m = cfg.adjudication.m;
    let seed = state.factory.sub_seed("evaluators", &[]);
    let work: Vec<(usize, Option<&UpdateDelta>, Vec<usize>)> = participants
        .iter()
        .map(|&p| {
            let previous = state.last_panel.get(&p).cloned().unwrap_or_default();
            let panel = select_evaluators(&pool, p, m, round, seed, &previous).unwrap_or_default();
            (p, delivered.iter().find(|u| u.node == p), panel)
        })
        .collect();

    let judged: Vec<Result<Judgement>> = work
        .par_iter()
        .map(|(p, update, panel)| {
            let Some(update) = update else {
                return Ok((*p, false, None, panel.clone()));
            };
            if panel.len() < m {
                return Ok((*p, true, None, panel.clone()));
            }
            let shards = assign_shards(round, *p as u64, m, cfg.adjudication.num_shards)?;
            let mut rng = state.factory.stream("adjudicate", &[round, *p as u64]);
            let errors = sample_errors(&noise, m, &mut rng);
            let mut votes = Vec::with_capacity(m);
            for ((&ev, &shard), err) in panel.iter().zip(&shards).zip(errors) {
                let truth = judge_update(global_before, &update.delta, &state.validation_shards[shard])?;
                votes.push(EvaluatorVote {
                    evaluator: ev,
                    shard,
                    verdict: truth ^ err,
                    true_quality: truth,
                });
            }
            let verdicts: Vec<bool> = votes.iter().map(|v| v.verdict).collect();
            let outcome = adjudicate(&verdicts)?;
            let record = AdjudicationRecord {
                round,
                target: *p,
                votes,
                outcome,
            };
            Ok((*p, outcome, Some(record), panel.clone()))
        })
        .collect();

    let mut outcomes = Vec::with_capacity(participants.len());
    for j in judged {
        let (p, outcome, record, panel) = j?;
        state.reputations[p].record(TASK_DOMAIN, outcome, &cfg.reputation);
        if let Some(r) = record {
            state.adjudications.push(r);
        }
        state.last_panel.insert(p, panel);
        outcomes.push((p, outcome));
    }
    Ok(outcomes)
}

fn measure_network(state: &SimState, round: u64, leader: usize) -> Result<NetworkSample> {
    let cfg = &state.config.network;
    let alive = state.net.alive();
    let scores: Vec<f64> = (0..state.len()).map(|i| state.score(i)).collect();
    let mut rng = state.factory.stream("gossip", &[round]);
    let trace = gossip_broadcast(
        &state.net,
        leader,
        model_digest(&state.global),
        &cfg.gossip,
        |i| scores[i],
        &mut rng,
    )?;
    let mut rng = state.factory.stream("lookups", &[round]);
    let mut hops = 0usize;
    let lookups = if alive.len() > 1 { cfg.lookups_per_round } else { 0 };
    for _ in 0..lookups {
        let a = alive[rng.random_range(0..alive.len())];
        let b = alive[rng.random_range(0..alive.len())];
        hops += state.net.lookup(a, &state.net.peers()[b].id, cfg.lookup_alpha)?.hops;
    }
    Ok(NetworkSample {
        alive: alive.len(),
        departures: 0,
        arrivals: 0,
        coverage: trace.per_round,
        gossip_messages: trace.messages_sent,
        queue_drops: trace.queue_drops,
        lookup_hops_mean: if lookups > 0 { hops as f64 / lookups as f64 } else { 0.0 },
    })
}

/// Executes round `round` against `state`.
pub fn run_round(state: &mut SimState, round: u64) -> Result<RoundResult> {
    let (departures, arrivals) = apply_churn(state, round)?;
    let cfg = state.config.clone();
    let val_acc_before = state.global_val_acc;
    let global_before = state.global.clone();
    let start_scores: Vec<f64> = (0..state.len()).map(|i| state.score(i)).collect();

    let alive = state.net.alive();
    let leader_cands: Vec<LeaderCandidate> = alive
        .iter()
        .map(|&n| LeaderCandidate {
            node: n,
            reputation: start_scores[n],
            id_hash: state.net.peers()[n].id.short(),
        })
        .collect();
    let rotation = leader_rotation(&leader_cands, cfg.consensus.leader_rotation);
    let initiator = rotation[(round as usize) % rotation.len()];

    let mut result = RoundResult {
        round,
        success: false,
        checks: SuccessChecks::default(),
        outcome: RoundOutcome::EmptyPool,
        accepted_model: None,
        participants: Vec::new(),
        delivered: 0,
        node_outcomes: Vec::new(),
        val_acc_before,
        val_acc_after: val_acc_before,
        test_acc: 0.0,
        round_time_s: 0.0,
        consensus: Vec::new(),
        network: NetworkSample::default(),
    };

    let pool: Vec<Candidate> = (0..cfg.nodes.gpu_pool)
        .filter(|&n| state.is_alive(n))
        .map(|n| {
            let target = ProbeTarget {
                true_profile: state.true_profile(n, initiator, round),
                announced_cap: state.hardware[n].cap,
                online: true,
            };
            Candidate {
                node: n,
                id_hash: state.net.peers()[n].id.short(),
                profile: probe_capability(&target, round),
                reputation: start_scores[n],
            }
        })
        .collect();
    let k = cfg.nodes.k_train.min(pool.len());
    if k > 0 {
        let mut rng = state.factory.stream("select", &[round]);
        let participants = select_with_strategy(
            cfg.selection.strategy,
            &pool,
            k,
            &cfg.selection.weights,
            round,
            &mut rng,
        )?;
        result.participants = participants;
    }

    if !result.participants.is_empty() {
        let shared: &SimState = state;
        let subs: Vec<Submission> = result
            .participants
            .par_iter()
            .map(|&n| local_work(shared, n, round, initiator))
            .collect::<Result<_>>()?;
        for (s, &n) in subs.iter().zip(&result.participants) {
            state.ledger.record(n, s.steps as u64, s.sample_rate);
        }

        let deadline = state.timeout_s;
        let mut delivered: Vec<UpdateDelta> = Vec::new();
        let mut last_arrival: f64 = 0.0;
        let mut straggler = false;
        for s in &subs {
            if s.dropped {
                continue;
            }
            if s.arrival_s <= deadline {
                last_arrival = last_arrival.max(s.arrival_s);
                delivered.push(s.update.clone());
            } else {
                straggler = true;
            }
        }
        let collection_end = if straggler { deadline } else { last_arrival };
        result.delivered = delivered.len();
        result.checks.enough_updates = delivered.len() >= cfg.min_updates().min(k);
        result.round_time_s = collection_end;

        if !result.checks.enough_updates {
            result.outcome = RoundOutcome::InsufficientUpdates;
        } else {
            if cfg.attack.kind == AttackKind::Alie {
                let colluders: Vec<UpdateDelta> = delivered
                    .iter()
                    .filter(|u| state.roles[u.node] == Role::Byzantine)
                    .cloned()
                    .collect();
                let z = cfg.attack.effective_z(delivered.len(), colluders.len());
                for crafted in alie_attack(&colluders, z)? {
                    if let Some(slot) = delivered.iter_mut().find(|u| u.node == crafted.node) {
                        *slot = crafted;
                    }
                }
            }
            if cfg.aggregation.exclude_attackers {
                delivered.retain(|u| state.roles[u.node] == Role::Honest);
            }
            let reps: Vec<f64> = delivered.iter().map(|u| start_scores[u.node]).collect();
            let bound = cfg
                .aggregation
                .byzantine_bound
                .unwrap_or_else(|| (cfg.attack.byzantine_fraction * delivered.len() as f64).round() as usize)
                .min((delivered.len().saturating_sub(1)) / 2);
            let kind = cfg.aggregation.kind;
            let bound = if kind == AggregatorKind::Krum {
                bound.min(delivered.len().saturating_sub(3))
            } else {
                bound
            };
            match aggregate(kind, &state.global, &delivered, &reps, bound) {
                Err(NexusError::NoTrustedMass) => result.outcome = RoundOutcome::NoTrustedMass,
                Err(e) => return Err(e),
                Ok(candidate) => {
                    let event = finalize(state, round, &candidate, ProposalKind::Honest, &rotation)?;
                    result.round_time_s += event.latency_s;
                    result.checks.quorum_approved = event.committed();
                    result.outcome = if event.committed() {
                        RoundOutcome::Committed
                    } else {
                        RoundOutcome::Rejected
                    };
                    result.consensus.push(event);
                    if result.checks.quorum_approved {
                        result.accepted_model = Some(candidate);
                        result.node_outcomes =
                            adjudicate_participants(state, round, &global_before, &result.participants, &delivered)?;
                    }
                }
            }
        }
        result.checks.within_timeout = !straggler && result.round_time_s <= deadline;
    }

    let mut adv_rng = state.factory.stream("adversary", &[round]);
    if cfg.consensus.adversarial_proposal_prob > 0.0 && adv_rng.random_bool(cfg.consensus.adversarial_proposal_prob) {
        let poisoned = adversarial_checkpoint(&state.global);
        let event = finalize(state, round, &poisoned, ProposalKind::Adversarial, &rotation)?;
        result.consensus.push(event);
    }

    let interval = cfg.consensus.collusion_scan_interval;
    if result.checks.quorum_approved && interval > 0 && (round + 1).is_multiple_of(interval) {
        let flagged = collusion_scan(&state.dissent, &cfg.reputation)?;
        for node in collusion_penalty_targets(&flagged) {
            state.reputations[node].record(TASK_DOMAIN, false, &cfg.reputation);
        }
    }

    result.val_acc_after = state.global_val_acc;
    result.test_acc = evaluate(&state.global, &state.splits.test)?;
    result.checks.no_regression =
        result.checks.quorum_approved && result.val_acc_after >= val_acc_before - cfg.timing.regression_tolerance;
    result.success = result.checks.all();
    result.network = measure_network(state, round, initiator)?;
    result.network.departures = departures;
    result.network.arrivals = arrivals;
    Ok(result)
}
