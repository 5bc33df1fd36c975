//! Attacker behaviors applied to flagged nodes only.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::aggregation::UpdateDelta;
use crate::error::{NexusError, Result};
use crate::learner::Examples;
use crate::network::{Network, NodeId, Region};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    GradientFlip,
    Alie,
    Backdoor,
    Sybil,
    Unreliable,
    Farming,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::GradientFlip => "gradient_flip",
            AttackKind::Alie => "alie",
            AttackKind::Backdoor => "backdoor",
            AttackKind::Sybil => "sybil",
            AttackKind::Unreliable => "unreliable",
            AttackKind::Farming => "farming",
        }
    }
}

/// How the ALIE displacement `z` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlieZMode {
    /// Use `AttackSpec::z` as given.
    Fixed,
    /// Derive `z` from attacker and participant counts.
    InverseNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub byzantine_fraction: f64,
    pub z: f64,
    pub z_mode: AlieZMode,
    pub trigger_indices: Vec<usize>,
    pub trigger_value: f64,
    pub target_label: usize,
    pub poison_fraction: f64,
    pub sybil_count: usize,
    pub failure_prob: f64,
    pub farming_onset_round: u64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            byzantine_fraction: 0.0,
            z: 1.0,
            z_mode: AlieZMode::Fixed,
            trigger_indices: vec![0, 1],
            trigger_value: 4.0,
            target_label: 0,
            poison_fraction: 0.5,
            sybil_count: 0,
            failure_prob: 0.4,
            farming_onset_round: 50,
        }
    }
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.byzantine_fraction) {
            return Err(NexusError::InvalidArgument(format!(
                "byzantine_fraction must be in [0, 1), got {}",
                self.byzantine_fraction
            )));
        }
        for (name, p) in [
            ("poison_fraction", self.poison_fraction),
            ("failure_prob", self.failure_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(NexusError::InvalidArgument(format!(
                    "{name} must be in [0, 1], got {p}"
                )));
            }
        }
        if !self.z.is_finite() || !self.trigger_value.is_finite() {
            return Err(NexusError::InvalidArgument("z and trigger_value must be finite".into()));
        }
        Ok(())
    }

    /// `z` actually used for a round with `n` participants of which
    /// `attackers` collude.
    pub fn effective_z(&self, n: usize, attackers: usize) -> f64 {
        match self.z_mode {
            AlieZMode::Fixed => self.z,
            AlieZMode::InverseNormal => alie_inverse_normal_z(n, attackers),
        }
    }
}

/// `delta' = -delta`.
pub fn gradient_flip(update: &UpdateDelta) -> UpdateDelta {
    UpdateDelta {
        node: update.node,
        delta: update.delta.iter().map(|v| -v).collect(),
        n_k: update.n_k,
    }
}

/// Per-coordinate mean and population standard deviation.
pub fn colluder_stats(deltas: &[&[f64]]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = deltas
        .first()
        .ok_or_else(|| NexusError::InsufficientData("no colluder deltas".into()))?;
    let dim = first.len();
    if let Some(bad) = deltas.iter().find(|d| d.len() != dim) {
        return Err(NexusError::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    let n = deltas.len() as f64;
    let mut mu = vec![0.0; dim];
    for d in deltas {
        for (m, v) in mu.iter_mut().zip(d.iter()) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for d in deltas {
        for ((s, v), m) in var.iter_mut().zip(d.iter()).zip(mu.iter()) {
            *s += (v - m) * (v - m);
        }
    }
    let sigma = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok((mu, sigma))
}

/// `mu + z * sigma`, elementwise.
pub fn alie_craft(mu: &[f64], sigma: &[f64], z: f64) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() {
        return Err(NexusError::DimensionMismatch {
            expected: mu.len(),
            actual: sigma.len(),
        });
    }
    Ok(mu.iter().zip(sigma).map(|(m, s)| m + z * s).collect())
}

/// Colluders replace their honest deltas with one shared crafted vector,
/// estimated from their own pre-attack deltas. A lone colluder has no
/// variance estimate and flips instead.
pub fn alie_attack(colluders: &[UpdateDelta], z: f64) -> Result<Vec<UpdateDelta>> {
    if colluders.len() < 2 {
        return Ok(colluders.iter().map(gradient_flip).collect());
    }
    let views: Vec<&[f64]> = colluders.iter().map(|u| u.delta.as_slice()).collect();
    let (mu, sigma) = colluder_stats(&views)?;
    let crafted = alie_craft(&mu, &sigma, z)?;
    Ok(colluders
        .iter()
        .map(|u| UpdateDelta {
            node: u.node,
            delta: crafted.clone(),
            n_k: u.n_k,
        })
        .collect())
}

/// `z = Phi^-1((n - s) / n)` with `s = floor(n/2 + 1) - attackers`, the
/// number of honest participants the attacker needs on its side.
pub fn alie_inverse_normal_z(n: usize, attackers: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let s = (n / 2 + 1) as f64 - attackers as f64;
    let p = ((n as f64 - s) / n as f64).clamp(1e-6, 1.0 - 1e-6);
    Normal::standard().inverse_cdf(p)
}

/// Overwrites the trigger features and relabels a random `poison_fraction`
/// of the shard.
pub fn backdoor_poison(shard: &Examples, spec: &AttackSpec, rng: &mut SimRng) -> Result<Examples> {
    if let Some(&bad) = spec.trigger_indices.iter().find(|&&i| i >= shard.dim) {
        return Err(NexusError::InvalidArgument(format!(
            "trigger index {bad} outside feature dimension {}",
            shard.dim
        )));
    }
    if spec.target_label >= shard.classes {
        return Err(NexusError::InvalidArgument(format!(
            "target label {} outside {} classes",
            spec.target_label, shard.classes
        )));
    }
    let mut out = shard.clone();
    let count = (spec.poison_fraction * shard.len() as f64).round() as usize;
    for i in sample(rng, shard.len(), count.min(shard.len())) {
        let row = out.row_mut(i);
        for &f in &spec.trigger_indices {
            row[f] = spec.trigger_value;
        }
        out.labels[i] = spec.target_label;
    }
    Ok(out)
}

/// Adds `count` fresh identities to the network, joined like any other
/// peer. Returns their node indices.
pub fn inject_sybils(
    net: &mut Network,
    count: usize,
    rng: &mut SimRng,
    reputation: impl Fn(usize) -> f64,
) -> Vec<usize> {
    let mut added = Vec::with_capacity(count);
    for _ in 0..count {
        let id = NodeId::random(rng);
        let node = net.add_peer(id, Region::round_robin(net.len()));
        added.push(node);
    }
    for &node in &added {
        // Every node was just created, so the join cannot fail.
        let _ = net.join(node, &reputation);
    }
    added
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnreliableAction {
    Honest,
    /// Submit a random direction at honest-typical norm.
    Garbage,
}

pub fn unreliable_behavior<R: Rng + ?Sized>(failure_prob: f64, rng: &mut R) -> Result<UnreliableAction> {
    if !(0.0..=1.0).contains(&failure_prob) {
        return Err(NexusError::InvalidArgument(format!(
            "failure_prob must be in [0, 1], got {failure_prob}"
        )));
    }
    Ok(if rng.random_bool(failure_prob) {
        UnreliableAction::Garbage
    } else {
        UnreliableAction::Honest
    })
}

/// Uniformly random direction in `dim` dimensions scaled to `norm`.
pub fn random_direction<R: Rng + ?Sized>(dim: usize, norm: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 0.0 || dim == 0 {
            return v.into_iter().map(|x| x * norm / len.max(f64::MIN_POSITIVE)).collect();
        }
    }
}

/// Farming nodes behave honestly until the onset round, then flip.
pub fn farming_active(spec: &AttackSpec, round: u64) -> bool {
    spec.kind == AttackKind::Farming && round >= spec.farming_onset_round
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = l2_norm(a) * l2_norm(b);
    if n > 0.0 {
        dot / n
    } else {
        0.0
    }
}
