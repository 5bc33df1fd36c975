//! Participant selection: the weighted capability/load/latency/reputation
//! score, probe-verified capability profiles, and the comparison strategies
//! used by the selection experiments.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NexusError, Result};
use crate::rng::public_hash64;

/// Round-trip time that maps to the worst latency factor of 1.
pub const RTT_MAX_MS: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapabilityProfile {
    /// Hardware capability match in `[0, 1]`.
    pub cap: f64,
    /// Current utilization in `[0, 1]`.
    pub load: f64,
    /// Normalized latency in `[0, 1]`.
    pub lat: f64,
    pub verified_at: u64,
    /// Last probe failed; capability counts as zero until re-probed.
    pub stale: bool,
}

impl CapabilityProfile {
    pub fn new(cap: f64, load: f64, lat: f64) -> Self {
        Self {
            cap,
            load,
            lat,
            verified_at: 0,
            stale: false,
        }
    }

    pub fn effective_cap(&self) -> f64 {
        if self.stale {
            0.0
        } else {
            self.cap
        }
    }
}

/// `min(rtt / 200 ms, 1)`.
pub fn normalize_latency(rtt_ms: f64) -> f64 {
    (rtt_ms / RTT_MAX_MS).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for SelectionWeights {
    fn default() -> Self {
        Self {
            w1: 0.4,
            w2: 0.2,
            w3: 0.1,
            w4: 0.3,
        }
    }
}

impl SelectionWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w1, self.w2, self.w3, self.w4];
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(NexusError::config("selection.weights", "weights must be nonnegative"));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(NexusError::config("selection.weights", "weights must sum to 1"));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            w1: self.w1 * k,
            w2: self.w2 * k,
            w3: self.w3 * k,
            w4: self.w4 * k,
        }
    }

    /// The default weights without the reputation term, renormalized.
    pub fn capability_only() -> Self {
        let d = Self::default();
        let total = d.w1 + d.w2 + d.w3;
        Self {
            w1: d.w1 / total,
            w2: d.w2 / total,
            w3: d.w3 / total,
            w4: 0.0,
        }
    }
}

/// `w1 cap + w2 (1 - load) + w3 (1 - lat) + w4 r`.
pub fn score_candidate(profile: &CapabilityProfile, reputation: f64, weights: &SelectionWeights) -> f64 {
    weights.w1 * profile.effective_cap()
        + weights.w2 * (1.0 - profile.load)
        + weights.w3 * (1.0 - profile.lat)
        + weights.w4 * reputation
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub node: usize,
    /// Stable identity hash used for tie-breaking.
    pub id_hash: u64,
    pub profile: CapabilityProfile,
    pub reputation: f64,
}

fn tie_key(c: &Candidate, round: u64) -> u64 {
    public_hash64(&[c.id_hash, round])
}

/// The `k` highest-scoring candidates, best first. Equal scores are ordered by
/// the hash of the node id with the round number.
pub fn select_participants(
    candidates: &[Candidate],
    k: usize,
    weights: &SelectionWeights,
    round: u64,
) -> Result<Vec<usize>> {
    rank_by(candidates, k, round, |c| {
        score_candidate(&c.profile, c.reputation, weights)
    })
}

fn rank_by(candidates: &[Candidate], k: usize, round: u64, key: impl Fn(&Candidate) -> f64) -> Result<Vec<usize>> {
    if candidates.len() < k {
        return Err(NexusError::InsufficientCandidates {
            needed: k,
            available: candidates.len(),
        });
    }
    let mut scored: Vec<(f64, u64, usize)> = candidates.iter().map(|c| (key(c), tie_key(c, round), c.node)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(scored.into_iter().take(k).map(|(_, _, n)| n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    ReputationAware,
    Random,
    CapabilityOnly,
    LoadBalanced,
}

impl SelectionStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionStrategy::ReputationAware => "reputation_aware",
            SelectionStrategy::Random => "random",
            SelectionStrategy::CapabilityOnly => "capability_only",
            SelectionStrategy::LoadBalanced => "load_balanced",
        }
    }
}

/// Dispatches to the configured strategy. Only `Random` consumes `rng`.
pub fn select_with_strategy<R: Rng + ?Sized>(
    strategy: SelectionStrategy,
    candidates: &[Candidate],
    k: usize,
    weights: &SelectionWeights,
    round: u64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    match strategy {
        SelectionStrategy::ReputationAware => select_participants(candidates, k, weights, round),
        SelectionStrategy::CapabilityOnly => {
            select_participants(candidates, k, &SelectionWeights::capability_only(), round)
        }
        SelectionStrategy::LoadBalanced => rank_by(candidates, k, round, |c| 1.0 - c.profile.load),
        SelectionStrategy::Random => {
            if candidates.len() < k {
                return Err(NexusError::InsufficientCandidates {
                    needed: k,
                    available: candidates.len(),
                });
            }
            let mut nodes: Vec<usize> = candidates.iter().map(|c| c.node).collect();
            nodes.sort_unstable();
            nodes.shuffle(rng);
            nodes.truncate(k);
            Ok(nodes)
        }
    }
}

/// What the prober can observe about a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeTarget {
    pub true_profile: CapabilityProfile,
    pub announced_cap: f64,
    pub online: bool,
}

/// Challenge-response capability check. Probes always catch inflation: the
/// verified capability is the smaller of announced and true capability.
pub fn probe_capability(target: &ProbeTarget, round: u64) -> CapabilityProfile {
    let mut profile = target.true_profile;
    profile.verified_at = round;
    if !target.online {
        profile.stale = true;
        profile.cap = 0.0;
        return profile;
    }
    profile.cap = target.announced_cap.min(target.true_profile.cap);
    profile.stale = false;
    profile
}
