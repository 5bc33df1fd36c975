//! Outcome adjudication: public shard schedule, region-stratified evaluator
//! choice, equicorrelated noisy verdicts and majority aggregation.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NexusError, Result};
use crate::learner::{evaluate, Examples, ModelParams};
use crate::rng::public_hash64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Per-evaluator error rate.
    pub eta: f64,
    /// Pairwise correlation of evaluator errors.
    pub rho: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { eta: 0.15, rho: 0.22 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.eta) {
            return Err(NexusError::config("noise.eta", "must be in [0, 0.5]"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(NexusError::config("noise.rho", "must be in [0, 1)"));
        }
        Ok(())
    }

    /// Probability that two evaluators return the same verdict on the same item.
    pub fn pairwise_agreement(&self) -> f64 {
        pairwise_agreement(self.eta, self.rho)
    }
}

/// `P(v_i == v_j) = 1 - 2 eta (1 - eta) (1 - rho)` for the common-bit mixture.
pub fn pairwise_agreement(eta: f64, rho: f64) -> f64 {
    1.0 - 2.0 * eta * (1.0 - eta) * (1.0 - rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorVote {
    pub evaluator: usize,
    pub shard: usize,
    pub verdict: bool,
    /// Simulation ground truth, hidden from the protocol.
    pub true_quality: bool,
}

/// All votes cast on one `(round, target)` adjudication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationRecord {
    pub round: u64,
    pub target: usize,
    pub votes: Vec<EvaluatorVote>,
    pub outcome: bool,
}

/// Shard indices for evaluator slots `0..m` of `(round, node)`.
///
/// Slot `i` starts at `H(round || node || i) mod num_shards` and probes
/// linearly past shards already taken by earlier slots.
pub fn assign_shards(round: u64, node: u64, m: usize, num_shards: usize) -> Result<Vec<usize>> {
    if num_shards < m {
        return Err(NexusError::InvalidArgument(format!(
            "need at least {m} shards, have {num_shards}"
        )));
    }
    let mut taken = vec![false; num_shards];
    let mut shards = Vec::with_capacity(m);
    for i in 0..m {
        let mut idx = (public_hash64(&[round, node, i as u64]) % num_shards as u64) as usize;
        while taken[idx] {
            idx = (idx + 1) % num_shards;
        }
        taken[idx] = true;
        shards.push(idx);
    }
    Ok(shards)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvaluatorCandidate {
    pub node: usize,
    pub region: u16,
}

/// Picks `m` evaluators for `target`, spreading them over regions.
///
/// Regions are visited round-robin in a hash-shuffled order, and within a
/// region candidates are taken in hash order. Evaluators from `previous`
/// (the last panel for this target) are skipped while enough others remain.
pub fn select_evaluators(
    peers: &[EvaluatorCandidate],
    target: usize,
    m: usize,
    round: u64,
    seed: u64,
    previous: &[usize],
) -> Result<Vec<usize>> {
    let eligible: Vec<EvaluatorCandidate> = peers.iter().copied().filter(|c| c.node != target).collect();
    if eligible.len() < m {
        return Err(NexusError::InsufficientEvaluators {
            needed: m,
            available: eligible.len(),
        });
    }
    let fresh: Vec<EvaluatorCandidate> = eligible
        .iter()
        .copied()
        .filter(|c| !previous.contains(&c.node))
        .collect();
    let pool = if fresh.len() >= m { fresh } else { eligible };

    let mut by_region: BTreeMap<u16, Vec<EvaluatorCandidate>> = BTreeMap::new();
    for c in pool {
        by_region.entry(c.region).or_default().push(c);
    }
    let key = |tag: u64, x: u64| public_hash64(&[seed, round, target as u64, tag, x]);
    let mut regions: Vec<(u64, Vec<EvaluatorCandidate>)> = by_region
        .into_iter()
        .map(|(region, mut members)| {
            members.sort_by_key(|c| (key(1, c.node as u64), c.node));
            (key(0, region as u64), members)
        })
        .collect();
    regions.sort_by_key(|(h, _)| *h);

    let mut chosen = Vec::with_capacity(m);
    let mut depth = 0;
    while chosen.len() < m {
        for (_, members) in &regions {
            if let Some(c) = members.get(depth) {
                chosen.push(c.node);
                if chosen.len() == m {
                    break;
                }
            }
        }
        depth += 1;
    }
    Ok(chosen)
}

/// Error indicators for `m` evaluators: with probability `rho` all copy one
/// common Bernoulli(eta) bit, otherwise each draws its own.
pub fn sample_errors<R: Rng + ?Sized>(noise: &NoiseModel, m: usize, rng: &mut R) -> Vec<bool> {
    if rng.random_bool(noise.rho) {
        let common = rng.random_bool(noise.eta);
        vec![common; m]
    } else {
        (0..m).map(|_| rng.random_bool(noise.eta)).collect()
    }
}

/// Verdicts of `m` evaluators that all assess the same ground truth.
pub fn simulate_votes<R: Rng + ?Sized>(true_quality: bool, noise: &NoiseModel, m: usize, rng: &mut R) -> Vec<bool> {
    sample_errors(noise, m, rng)
        .into_iter()
        .map(|err| true_quality ^ err)
        .collect()
}

/// Strict majority of an odd-length verdict list.
pub fn adjudicate(verdicts: &[bool]) -> Result<bool> {
    if verdicts.is_empty() || verdicts.len().is_multiple_of(2) {
        return Err(NexusError::InvalidArgument(format!(
            "adjudication needs an odd number of verdicts, got {}",
            verdicts.len()
        )));
    }
    let ones = verdicts.iter().filter(|&&v| v).count();
    Ok(2 * ones > verdicts.len())
}

/// Whether adding `delta` to the global model keeps accuracy on `shard`.
/// Equal accuracy counts as positive.
pub fn judge_update(global: &ModelParams, delta: &[f64], shard: &Examples) -> Result<bool> {
    if shard.is_empty() {
        return Err(NexusError::InvalidArgument("empty validation shard".into()));
    }
    let candidate = global.plus(delta)?;
    let before = evaluate(global, shard)?;
    let after = evaluate(&candidate, shard)?;
    Ok(after >= before)
}

/// Pairwise agreement across an adjudication log and the correlation it implies
/// for error rate `eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub rate: f64,
    pub implied_rho: f64,
    pub pairs: usize,
}

pub fn measure_agreement(log: &[AdjudicationRecord], eta: f64) -> Result<Agreement> {
    let mut agree = 0usize;
    let mut total = 0usize;
    let mut common: HashMap<(usize, usize), usize> = HashMap::new();
    for record in log {
        for (i, a) in record.votes.iter().enumerate() {
            for b in &record.votes[i + 1..] {
                total += 1;
                agree += usize::from(a.verdict == b.verdict);
                let key = (a.evaluator.min(b.evaluator), a.evaluator.max(b.evaluator));
                *common.entry(key).or_default() += 1;
            }
        }
    }
    if !common.values().any(|&n| n >= 20) {
        return Err(NexusError::InsufficientData(
            "need two evaluators with at least 20 common adjudications".into(),
        ));
    }
    let rate = agree as f64 / total as f64;
    Ok(Agreement {
        rate,
        implied_rho: implied_rho(rate, eta),
        pairs: total,
    })
}

/// Inverts [`pairwise_agreement`] in `rho` by bisection, clamped to `[0, 1)`.
pub fn implied_rho(agreement: f64, eta: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if pairwise_agreement(eta, lo) >= agreement {
        return 0.0;
    }
    if pairwise_agreement(eta, hi) <= agreement {
        return 1.0 - f64::EPSILON;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if pairwise_agreement(eta, mid) < agreement {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shards_are_deterministic_and_distinct() {
        let a = assign_shards(4, 17, 3, 10).unwrap();
        assert_eq!(a, assign_shards(4, 17, 3, 10).unwrap());
        let mut b = assign_shards(9, 2, 3, 3).unwrap();
        b.sort();
        assert_eq!(b, vec![0, 1, 2]);
        assert!(assign_shards(1, 1, 3, 2).is_err());
    }

    #[test]
    fn shard_frequencies_are_near_uniform() {
        let num_shards = 10;
        let mut counts = vec![0usize; num_shards];
        for t in 0..100u64 {
            for k in 0..100u64 {
                for s in assign_shards(t, k, 3, num_shards).unwrap() {
                    counts[s] += 1;
                }
            }
        }
        let expected = 30_000.0 / num_shards as f64;
        for c in counts {
            assert!((c as f64 - expected).abs() <= 0.1 * expected, "{c}");
        }
    }

    fn cands(regions: &[u16]) -> Vec<EvaluatorCandidate> {
        regions
            .iter()
            .enumerate()
            .map(|(i, &r)| EvaluatorCandidate { node: i, region: r })
            .collect()
    }

    #[test]
    fn evaluators_cover_distinct_regions() {
        let peers = cands(&[0, 0, 0, 1, 1, 1, 2, 2, 2]);
        for t in 0..20 {
            let picked = select_evaluators(&peers, 99, 3, t, 5, &[]).unwrap();
            let mut regions: Vec<u16> = picked.iter().map(|&n| peers[n].region).collect();
            regions.sort();
            assert_eq!(regions, vec![0, 1, 2]);
        }
    }

    #[test]
    fn evaluator_edge_cases() {
        let peers = cands(&[4, 4, 4]);
        let mut picked = select_evaluators(&peers, 99, 3, 0, 1, &[]).unwrap();
        picked.sort();
        assert_eq!(picked, vec![0, 1, 2]);

        let peers = cands(&[0, 1, 2, 0, 1]);
        for t in 0..30 {
            assert!(!select_evaluators(&peers, 2, 3, t, 1, &[]).unwrap().contains(&2));
        }
        let err = select_evaluators(&cands(&[0, 1, 2]), 0, 3, 0, 1, &[]).unwrap_err();
        assert!(matches!(err, NexusError::InsufficientEvaluators { .. }));
    }

    #[test]
    fn previous_panel_is_avoided_when_possible() {
        let peers = cands(&[0, 1, 2, 0, 1, 2]);
        let first = select_evaluators(&peers, 99, 3, 1, 3, &[]).unwrap();
        let second = select_evaluators(&peers, 99, 3, 2, 3, &first).unwrap();
        assert!(second.iter().all(|n| !first.contains(n)));
        // Not enough alternatives: fall back to the full pool.
        let small = cands(&[0, 1, 2, 0]);
        let first = select_evaluators(&small, 99, 3, 1, 3, &[]).unwrap();
        assert_eq!(select_evaluators(&small, 99, 3, 2, 3, &first).unwrap().len(), 3);
    }

    #[test]
    fn adjudication_majority() {
        assert!(adjudicate(&[true, true, false]).unwrap());
        assert!(!adjudicate(&[false, false, true]).unwrap());
        assert!(adjudicate(&[true, true, true]).unwrap());
        assert!(adjudicate(&[]).is_err());
        assert!(adjudicate(&[true, false]).is_err());
    }

    #[test]
    fn noiseless_votes_match_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = NoiseModel { eta: 0.0, rho: 0.4 };
        for q in [true, false] {
            assert!(simulate_votes(q, &noise, 5, &mut rng).iter().all(|&v| v == q));
        }
    }

    fn majority_error_rate(noise: NoiseModel, trials: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut wrong = 0usize;
        for _ in 0..trials {
            let verdicts = simulate_votes(true, &noise, 3, &mut rng);
            wrong += usize::from(!adjudicate(&verdicts).unwrap());
        }
        wrong as f64 / trials as f64
    }

    #[test]
    fn independent_majority_error_matches_binomial() {
        let eta: f64 = 0.15;
        let exact = 3.0 * eta.powi(2) * (1.0 - eta) + eta.powi(3);
        assert!((exact - 0.06075).abs() < 1e-12);
        let trials = 1_000_000;
        let rate = majority_error_rate(NoiseModel { eta, rho: 0.0 }, trials, 11);
        let se = (exact * (1.0 - exact) / trials as f64).sqrt();
        assert!((rate - exact).abs() < 3.0 * se, "{rate} vs {exact}");
        assert!((rate - exact).abs() < 0.002);
    }

    #[test]
    fn perfectly_correlated_votes_collapse_to_single_draw() {
        // rho = 1 is outside the configured range; 0.999999 is equivalent at this sample size.
        let rate = majority_error_rate(
            NoiseModel {
                eta: 0.15,
                rho: 0.999_999,
            },
            1_000_000,
            12,
        );
        assert!((rate - 0.15).abs() < 0.002, "{rate}");
    }

    #[test]
    fn majority_is_permutation_invariant() {
        let v = [true, false, true, false, true];
        let mut w = v;
        w.reverse();
        w.swap(0, 2);
        assert_eq!(adjudicate(&v).unwrap(), adjudicate(&w).unwrap());
    }

    fn synthetic_log(noise: NoiseModel, n: usize, seed: u64) -> Vec<AdjudicationRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|t| {
                let truth = rng.random_bool(0.5);
                let verdicts = simulate_votes(truth, &noise, 3, &mut rng);
                AdjudicationRecord {
                    round: t as u64,
                    target: 0,
                    outcome: adjudicate(&verdicts).unwrap(),
                    votes: verdicts
                        .into_iter()
                        .enumerate()
                        .map(|(i, verdict)| EvaluatorVote {
                            evaluator: i,
                            shard: i,
                            verdict,
                            true_quality: truth,
                        })
                        .collect(),
                }
            })
            .collect()
    }

    #[test]
    fn agreement_round_trip_recovers_rho() {
        let noise = NoiseModel { eta: 0.15, rho: 0.22 };
        let log = synthetic_log(noise, 100_000, 3);
        let a = measure_agreement(&log, noise.eta).unwrap();
        // 1 - 2 (0.15)(0.85)(0.78) = 0.8011
        assert!((a.rate - 0.8011).abs() < 0.01, "{}", a.rate);
        assert!((a.implied_rho - 0.22).abs() < 0.05, "{}", a.implied_rho);
    }

    #[test]
    fn agreement_edge_cases() {
        let identical = synthetic_log(NoiseModel { eta: 0.0, rho: 0.0 }, 30, 4);
        let a = measure_agreement(&identical, 0.15).unwrap();
        assert_eq!(a.rate, 1.0);

        let coins = synthetic_log(NoiseModel { eta: 0.5, rho: 0.0 }, 20_000, 5);
        let a = measure_agreement(&coins, 0.15).unwrap();
        assert!((a.rate - 0.5).abs() < 0.01);
        assert_eq!(a.implied_rho, 0.0);

        assert!(matches!(
            measure_agreement(&identical[..5], 0.15),
            Err(NexusError::InsufficientData(_))
        ));
    }
}
