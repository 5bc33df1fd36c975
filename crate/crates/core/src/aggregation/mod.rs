//! Reputation-weighted federated averaging and the robust baselines it is
//! compared against.

mod round;

pub use round::{run_round, ConsensusEvent, NetworkSample, ProposalKind, RoundOutcome, RoundResult, SuccessChecks};

use serde::{Deserialize, Serialize};

use crate::error::{NexusError, Result};
use crate::learner::ModelParams;

/// One participant's round delta `w_k^{t+1} - w^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateDelta {
    pub node: usize,
    pub delta: Vec<f64>,
    /// Number of local training examples.
    pub n_k: usize,
}

/// `alpha_k = n_k r_k / sum_j n_j r_j`.
pub fn aggregation_weights(updates: &[UpdateDelta], reputations: &[f64]) -> Result<Vec<f64>> {
    if updates.len() != reputations.len() {
        return Err(NexusError::DimensionMismatch {
            expected: updates.len(),
            actual: reputations.len(),
        });
    }
    // Reputations are rescaled by their maximum first; the ratio is unchanged
    // and uniform reputations reduce to exactly the FedAvg arithmetic.
    let top = reputations.iter().copied().fold(0.0f64, f64::max);
    if !(top > 0.0) {
        return Err(NexusError::NoTrustedMass);
    }
    let mass: Vec<f64> = updates
        .iter()
        .zip(reputations)
        .map(|(u, &r)| u.n_k as f64 * (r.max(0.0) / top))
        .collect();
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(NexusError::NoTrustedMass);
    }
    Ok(mass.into_iter().map(|m| m / total).collect())
}

/// Plain data-size weights `n_k / sum_j n_j`.
pub fn fedavg_weights(updates: &[UpdateDelta]) -> Result<Vec<f64>> {
    aggregation_weights(updates, &vec![1.0; updates.len()])
}

/// `w^t + sum_k alpha_k delta_k`.
pub fn rep_fedavg(global: &ModelParams, updates: &[UpdateDelta], weights: &[f64]) -> Result<ModelParams> {
    if updates.len() != weights.len() {
        return Err(NexusError::DimensionMismatch {
            expected: updates.len(),
            actual: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(NexusError::InvalidArgument(format!(
            "aggregation weights must sum to 1, got {total}"
        )));
    }
    let mut out = global.clone();
    for (u, &a) in updates.iter().zip(weights) {
        global.check_len(u.delta.len())?;
        for (w, d) in out.values.iter_mut().zip(&u.delta) {
            *w += a * d;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    RepFedavg,
    Fedavg,
    TrimmedMean,
    Krum,
    Median,
}

impl AggregatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorKind::RepFedavg => "rep_fedavg",
            AggregatorKind::Fedavg => "fedavg",
            AggregatorKind::TrimmedMean => "trimmed_mean",
            AggregatorKind::Krum => "krum",
            AggregatorKind::Median => "median",
        }
    }
}

fn check_dims(global: &ModelParams, updates: &[UpdateDelta]) -> Result<()> {
    if updates.is_empty() {
        return Err(NexusError::InvalidArgument("no updates to aggregate".into()));
    }
    updates.iter().try_for_each(|u| global.check_len(u.delta.len()))
}

/// Coordinate-wise mean after dropping the `byzantine` smallest and largest values.
pub fn trimmed_mean(global: &ModelParams, updates: &[UpdateDelta], byzantine: usize) -> Result<ModelParams> {
    check_dims(global, updates)?;
    let n = updates.len();
    let trim = byzantine.min((n - 1) / 2);
    let mut out = global.clone();
    let mut column = vec![0.0; n];
    for j in 0..global.len() {
        for (slot, u) in column.iter_mut().zip(updates) {
            *slot = u.delta[j];
        }
        column.sort_by(f64::total_cmp);
        let kept = &column[trim..n - trim];
        out.values[j] += kept.iter().sum::<f64>() / kept.len() as f64;
    }
    Ok(out)
}

/// Coordinate-wise median.
pub fn coordinate_median(global: &ModelParams, updates: &[UpdateDelta]) -> Result<ModelParams> {
    check_dims(global, updates)?;
    let n = updates.len();
    let mut out = global.clone();
    let mut column = vec![0.0; n];
    for j in 0..global.len() {
        for (slot, u) in column.iter_mut().zip(updates) {
            *slot = u.delta[j];
        }
        column.sort_by(f64::total_cmp);
        let med = if n % 2 == 1 {
            column[n / 2]
        } else {
            0.5 * (column[n / 2 - 1] + column[n / 2])
        };
        out.values[j] += med;
    }
    Ok(out)
}

/// Krum: applies the single update whose summed squared distance to its
/// `n - byzantine - 2` nearest neighbours is smallest.
pub fn krum(global: &ModelParams, updates: &[UpdateDelta], byzantine: usize) -> Result<ModelParams> {
    check_dims(global, updates)?;
    let n = updates.len();
    let neighbours = n.saturating_sub(byzantine + 2).max(1).min(n - 1);
    let mut best = (f64::INFINITY, 0usize);
    for i in 0..n {
        let mut dists: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                updates[i]
                    .delta
                    .iter()
                    .zip(&updates[j].delta)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
            .collect();
        dists.sort_by(f64::total_cmp);
        let score: f64 = dists.iter().take(neighbours).sum();
        if score < best.0 {
            best = (score, i);
        }
    }
    if n == 1 {
        best.1 = 0;
    }
    global.plus(&updates[best.1].delta)
}

/// Aggregates with the chosen rule. `reputations` is only read by Rep-FedAvg.
pub fn aggregate(
    kind: AggregatorKind,
    global: &ModelParams,
    updates: &[UpdateDelta],
    reputations: &[f64],
    byzantine_bound: usize,
) -> Result<ModelParams> {
    match kind {
        AggregatorKind::RepFedavg => {
            let w = aggregation_weights(updates, reputations)?;
            rep_fedavg(global, updates, &w)
        }
        AggregatorKind::Fedavg => {
            let w = fedavg_weights(updates)?;
            rep_fedavg(global, updates, &w)
        }
        AggregatorKind::TrimmedMean => trimmed_mean(global, updates, byzantine_bound),
        AggregatorKind::Krum => krum(global, updates, byzantine_bound),
        AggregatorKind::Median => coordinate_median(global, updates),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn upd(node: usize, delta: Vec<f64>, n_k: usize) -> UpdateDelta {
        UpdateDelta { node, delta, n_k }
    }

    fn model(values: Vec<f64>) -> ModelParams {
        ModelParams {
            classes: 1,
            dim: values.len() - 1,
            values,
        }
    }

    #[test]
    fn weight_examples() {
        let u = vec![upd(0, vec![0.0], 100), upd(1, vec![0.0], 100)];
        let w = aggregation_weights(&u, &[0.8, 0.2]).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-12 && (w[1] - 0.2).abs() < 1e-12);

        let u = vec![upd(0, vec![0.0], 200), upd(1, vec![0.0], 100)];
        let w = aggregation_weights(&u, &[0.5, 1.0]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);

        let w = aggregation_weights(&u, &[0.5, 0.5]).unwrap();
        assert_eq!(w, fedavg_weights(&u).unwrap());

        assert_eq!(aggregation_weights(&u, &[0.0, 0.0]), Err(NexusError::NoTrustedMass));
    }

    #[test]
    fn rep_fedavg_examples() {
        let g = model(vec![1.0, 2.0, 3.0]);
        let zeros = vec![upd(0, vec![0.0; 3], 5), upd(1, vec![0.0; 3], 5)];
        assert_eq!(rep_fedavg(&g, &zeros, &[0.5, 0.5]).unwrap(), g);

        let local = vec![upd(0, vec![0.5, -1.0, 2.0], 5)];
        let out = rep_fedavg(&g, &local, &[1.0]).unwrap();
        assert_eq!(out.values, vec![1.5, 1.0, 5.0]);

        let v = vec![0.25, -0.75, 1.5];
        let opposite = vec![upd(0, v.clone(), 5), upd(1, v.iter().map(|x| -x).collect(), 5)];
        assert_eq!(rep_fedavg(&g, &opposite, &[0.5, 0.5]).unwrap(), g);

        assert!(rep_fedavg(&g, &[upd(0, vec![1.0; 2], 5)], &[1.0]).is_err());
        assert!(rep_fedavg(&g, &local, &[0.7]).is_err());
    }

    #[test]
    fn robust_baselines_resist_one_outlier() {
        let g = model(vec![0.0, 0.0]);
        let mut ups: Vec<UpdateDelta> = (0..4).map(|i| upd(i, vec![1.0 + 0.01 * i as f64, 1.0], 10)).collect();
        ups.push(upd(4, vec![100.0, -100.0], 10));
        let tm = trimmed_mean(&g, &ups, 1).unwrap();
        assert!((tm.values[0] - 1.015).abs() < 0.02);
        let kr = krum(&g, &ups, 1).unwrap();
        assert!(kr.values[0] < 2.0);
        let md = coordinate_median(&g, &ups).unwrap();
        assert_eq!(md.values[1], 1.0);
    }

    proptest! {
        #[test]
        fn weights_normalize(
            sizes in proptest::collection::vec(1usize..500, 1..20),
            reps in proptest::collection::vec(0.01f64..=1.0, 20),
        ) {
            let ups: Vec<UpdateDelta> = sizes.iter().enumerate().map(|(i, &n)| upd(i, vec![0.0], n)).collect();
            let w = aggregation_weights(&ups, &reps[..ups.len()]).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn uniform_reputation_is_fedavg_bitwise(
            sizes in proptest::collection::vec(1usize..500, 1..10),
            r in 0.05f64..=1.0,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = model((0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
            let ups: Vec<UpdateDelta> = sizes.iter().enumerate()
                .map(|(i, &n)| upd(i, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(), n))
                .collect();
            let rep = aggregate(AggregatorKind::RepFedavg, &g, &ups, &vec![r; ups.len()], 0).unwrap();
            let fed = aggregate(AggregatorKind::Fedavg, &g, &ups, &[], 0).unwrap();
            let bits = |m: &ModelParams| m.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&rep), bits(&fed));
        }

        #[test]
        fn decayed_byzantine_mass_is_attenuated(
            honest in 7usize..20,
            byz_share in 0.0f64..0.3,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dim = 8;
            let g = model(vec![0.0; dim]);
            let base: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let byz = ((byz_share * honest as f64) / (1.0 - byz_share)).floor() as usize;
            let honest_ups: Vec<UpdateDelta> = (0..honest)
                .map(|i| upd(i, base.iter().map(|b| b + rng.random_range(-0.2..0.2)).collect(), rng.random_range(100..=150)))
                .collect();
            let mut ups = honest_ups.clone();
            let mut reps: Vec<f64> = (0..honest).map(|_| rng.random_range(0.85..=1.0)).collect();
            for j in 0..byz {
                let victim = &honest_ups[j % honest];
                ups.push(upd(honest + j, victim.delta.iter().map(|x| -x).collect(), rng.random_range(100..=150)));
                reps.push(rng.random_range(0.0..0.05));
            }
            let rep = aggregate(AggregatorKind::RepFedavg, &g, &ups, &reps, 0).unwrap();
            let clean = aggregate(AggregatorKind::Fedavg, &g, &honest_ups, &[], 0).unwrap();
            let dist = rep.values.iter().zip(&clean.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = clean.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(dist <= 0.1 * norm, "dist {} norm {}", dist, norm);
        }
    }
}
