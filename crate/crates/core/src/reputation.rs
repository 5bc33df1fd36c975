//! Discounted Beta reputation.
//!
//! Each peer carries a pair of evidence masses `(alpha, beta)` that are aged by
//! `lambda` before every new binary outcome is added. The score is the Beta
//! ratio `alpha / (alpha + beta)` and `1 / (alpha + beta)` doubles as an
//! uncertainty estimate that separates newcomers from long-observed peers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{NexusError, Result};

/// Prior evidence mass for a fresh identity (uniform Beta(1, 1) prior).
pub const PRIOR_MASS: f64 = 1.0;

/// Minimum votes per node before the collusion scan has enough power.
pub const MIN_COLLUSION_VOTES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaReputation {
    pub alpha: f64,
    pub beta: f64,
    pub interactions: u64,
    pub domain: String,
}

impl BetaReputation {
    pub fn fresh(domain: impl Into<String>) -> Self {
        Self {
            alpha: PRIOR_MASS,
            beta: PRIOR_MASS,
            interactions: 0,
            domain: domain.into(),
        }
    }

    pub fn score(&self) -> f64 {
        score(self)
    }

    pub fn uncertainty(&self) -> f64 {
        uncertainty(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReputationParams {
    /// Aging factor applied to both evidence masses before each update.
    pub lambda: f64,
    pub r0: f64,
    /// Rounds a new identity must wait before high-sensitivity operations.
    pub cooldown_cycles: u64,
    /// Identities with uncertainty above this are blocked from high-sensitivity operations.
    pub uncertainty_gate: f64,
    /// Voters below this score are not part of a weight snapshot.
    pub eligibility_floor: f64,
    /// Significance level of the pairwise collusion test.
    pub collusion_p: f64,
}

impl Default for ReputationParams {
    fn default() -> Self {
        Self {
            lambda: 0.95,
            r0: 0.5,
            cooldown_cycles: 100,
            uncertainty_gate: 0.1,
            eligibility_floor: 0.3,
            collusion_p: 0.01,
        }
    }
}

impl ReputationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(NexusError::config("reputation.lambda", "must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.eligibility_floor) {
            return Err(NexusError::config("reputation.eligibility_floor", "must be in [0, 1]"));
        }
        if !(self.r0 > 0.0 && self.r0 < 1.0) {
            return Err(NexusError::config("reputation.r0", "must be in (0, 1)"));
        }
        if !(self.uncertainty_gate > 0.0) {
            return Err(NexusError::config("reputation.uncertainty_gate", "must be positive"));
        }
        if !(self.collusion_p > 0.0 && self.collusion_p < 1.0) {
            return Err(NexusError::config("reputation.collusion_p", "must be in (0, 1)"));
        }
        Ok(())
    }

    /// Fresh reputation at the configured initial score `r0`, with total prior mass 2.
    pub fn fresh(&self, domain: &str) -> BetaReputation {
        BetaReputation {
            alpha: 2.0 * self.r0,
            beta: 2.0 * (1.0 - self.r0),
            interactions: 0,
            domain: domain.to_string(),
        }
    }
}

/// One adjudicated outcome under exponential aging.
pub fn update(rep: &BetaReputation, outcome: bool, params: &ReputationParams) -> BetaReputation {
    let o = if outcome { 1.0 } else { 0.0 };
    BetaReputation {
        alpha: params.lambda * rep.alpha + o,
        beta: params.lambda * rep.beta + (1.0 - o),
        interactions: rep.interactions + 1,
        domain: rep.domain.clone(),
    }
}

pub fn score(rep: &BetaReputation) -> f64 {
    rep.alpha / (rep.alpha + rep.beta)
}

pub fn uncertainty(rep: &BetaReputation) -> f64 {
    1.0 / (rep.alpha + rep.beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationParams {
    /// Effective per-round success probability of an honest node.
    pub p_h_eff: f64,
    /// Effective per-round success probability of a Byzantine node.
    pub p_b_eff: f64,
    pub lambda: f64,
    pub rounds: u64,
}

/// Closed-form expected honest/Byzantine score gap after `rounds` outcomes,
/// starting both classes from the unit prior.
///
/// The evidence denominator `2 lambda^T + sum_{s<T} lambda^s` is deterministic,
/// so the expectation of the ratio is the ratio of expectations.
pub fn expected_gap(sp: &SeparationParams) -> f64 {
    if sp.rounds == 0 {
        return 0.0;
    }
    let lt = sp.lambda.powf(sp.rounds as f64);
    let evidence = if (sp.lambda - 1.0).abs() < f64::EPSILON {
        sp.rounds as f64
    } else {
        (1.0 - lt) / (1.0 - sp.lambda)
    };
    (sp.p_h_eff - sp.p_b_eff) * evidence / (2.0 * lt + evidence)
}

/// Limit of [`expected_gap`] as the number of rounds grows without bound.
pub fn asymptotic_gap(sp: &SeparationParams) -> f64 {
    sp.p_h_eff - sp.p_b_eff
}

/// Majority-vote error under equicorrelated evaluator errors, taken at the
/// upper bound `eta + rho * eta (1 - eta) (m - 1) / m`.
pub fn effective_error(eta: f64, rho: f64, m: usize) -> f64 {
    let m = m.max(1) as f64;
    eta + rho * eta * (1.0 - eta) * (m - 1.0) / m
}

/// Operation classes for the anti-whitewashing gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    /// Gossip, routing, training participation, 0.67-quorum votes.
    Low,
    /// Aggregation coordination and votes on quorums of 0.75 or more.
    High,
}

impl Sensitivity {
    pub fn for_quorum(threshold: f64) -> Self {
        if threshold >= 0.75 - 1e-12 {
            Sensitivity::High
        } else {
            Sensitivity::Low
        }
    }
}

/// True when the identity is blocked from an operation of class `sensitivity`.
pub fn is_gated(rep: &BetaReputation, age_cycles: u64, params: &ReputationParams, sensitivity: Sensitivity) -> bool {
    match sensitivity {
        Sensitivity::Low => false,
        Sensitivity::High => age_cycles < params.cooldown_cycles || uncertainty(rep) > params.uncertainty_gate,
    }
}

/// Result of one pairwise independence test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTest {
    pub statistic: f64,
    pub p_value: f64,
    /// Joint agreement exceeds what independence predicts.
    pub positive: bool,
}

/// Pearson chi-square test (1 d.o.f., no continuity correction) on the 2x2
/// table of two binary vote histories.
pub fn chi_square_pair(a: &[u8], b: &[u8]) -> PairTest {
    let mut table = [[0.0f64; 2]; 2];
    for (&x, &y) in a.iter().zip(b) {
        table[x as usize][y as usize] += 1.0;
    }
    let n = a.len().min(b.len()) as f64;
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    if n == 0.0 || rows.contains(&0.0) || cols.contains(&0.0) {
        // A constant history carries no dependence information.
        return PairTest {
            statistic: 0.0,
            p_value: 1.0,
            positive: false,
        };
    }
    let det = table[0][0] * table[1][1] - table[0][1] * table[1][0];
    let statistic = n * det * det / (rows[0] * rows[1] * cols[0] * cols[1]);
    PairTest {
        statistic,
        p_value: chi_square_1dof_sf(statistic),
        positive: det > 0.0,
    }
}

/// Survival function of the chi-square distribution with one degree of freedom.
pub fn chi_square_1dof_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        erfc((x / 2.0).sqrt())
    }
}

/// Flags node pairs whose vote histories are positively dependent at level
/// `params.collusion_p`. `votes[i]` is node `i`'s history; all rows must be
/// aligned on the same decisions.
pub fn collusion_scan(votes: &[Vec<u8>], params: &ReputationParams) -> Result<BTreeSet<(usize, usize)>> {
    let mut flagged = BTreeSet::new();
    if let Some(bad) = votes.iter().flatten().find(|&&v| v > 1) {
        return Err(NexusError::InvalidArgument(format!(
            "vote matrix entries must be 0 or 1, found {bad}"
        )));
    }
    if votes.len() < 2 {
        return Ok(flagged);
    }
    let len = votes[0].len();
    if votes.iter().any(|row| row.len() != len) {
        return Err(NexusError::InvalidArgument(
            "vote histories must be aligned to equal length".into(),
        ));
    }
    if len < MIN_COLLUSION_VOTES {
        return Ok(flagged);
    }
    for i in 0..votes.len() {
        for j in (i + 1)..votes.len() {
            let test = chi_square_pair(&votes[i], &votes[j]);
            if test.positive && test.p_value < params.collusion_p {
                flagged.insert((i, j));
            }
        }
    }
    Ok(flagged)
}

/// Nodes appearing in any flagged pair; each receives exactly one negative update per scan.
pub fn collusion_penalty_targets(flagged: &BTreeSet<(usize, usize)>) -> BTreeSet<usize> {
    flagged.iter().flat_map(|&(a, b)| [a, b]).collect()
}

/// Per-domain reputations of one peer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DomainReputation {
    domains: BTreeMap<String, BetaReputation>,
}

impl DomainReputation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, domain: &str) -> Option<&BetaReputation> {
        self.domains.get(domain)
    }

    pub fn get_or_fresh(&self, domain: &str, params: &ReputationParams) -> BetaReputation {
        self.domains
            .get(domain)
            .cloned()
            .unwrap_or_else(|| params.fresh(domain))
    }

    pub fn set(&mut self, rep: BetaReputation) {
        self.domains.insert(rep.domain.clone(), rep);
    }

    pub fn record(&mut self, domain: &str, outcome: bool, params: &ReputationParams) {
        let next = update(&self.get_or_fresh(domain, params), outcome, params);
        self.set(next);
    }

    /// Scalar used where a single number is required: the task domain's score,
    /// else the mean over known domains, else `r0`.
    pub fn scalar(&self, domain: &str, params: &ReputationParams) -> f64 {
        if let Some(rep) = self.domains.get(domain) {
            return rep.score();
        }
        if self.domains.is_empty() {
            return params.r0;
        }
        self.domains.values().map(score).sum::<f64>() / self.domains.len() as f64
    }

    pub fn domains(&self) -> impl Iterator<Item = &BetaReputation> {
        self.domains.values()
    }
}
