//! Randomized vote schedulers for exercising quorum safety.
//!
//! Each trial builds one weight snapshot, two conflicting proposals voted in
//! the same epoch family, and an adversarial interleaving of votes. Byzantine
//! voters equivocate (approve both); honest voters approve at most one.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{check_safety, EpochRecord, EpochState, OpClass, Proposal, WeightSnapshot};
use crate::error::Result;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzOutcome {
    pub double_commit: bool,
    /// Byzantine share of snapshot weight, `W_B / W`.
    pub byzantine_share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    A,
    B,
    Abstain,
}

fn op_for_quorum(q: f64) -> OpClass {
    OpClass::ALL
        .into_iter()
        .find(|&c| (super::quorum_threshold(c) - q).abs() < 1e-12)
        .unwrap_or(OpClass::FlRoundResult)
}

/// Runs both epochs under one random interleaving and checks the trace.
fn play(
    weights: &BTreeMap<usize, f64>,
    honest_sides: &BTreeMap<usize, (Side, bool)>,
    byzantine: &[usize],
    op: OpClass,
    rng: &mut SimRng,
) -> Result<bool> {
    let snapshot = WeightSnapshot::from_weights(weights.clone())?;
    let rotation: Vec<usize> = weights.keys().copied().collect();
    let a = Proposal::new(op, 1, 0xA, rotation[0], 1);
    let b = Proposal::new(op, 1, 0xB, rotation[0], 1);
    let mut epochs = [
        EpochState::new(a, snapshot.clone(), rotation.clone()),
        EpochState::new(b, snapshot, rotation),
    ];

    // (epoch index, voter, approve)
    let mut events: Vec<(usize, usize, bool)> = Vec::new();
    for &n in byzantine {
        events.push((0, n, true));
        events.push((1, n, true));
    }
    for (&n, &(side, reject_other)) in honest_sides {
        match side {
            Side::A => {
                events.push((0, n, true));
                if reject_other {
                    events.push((1, n, false));
                }
            }
            Side::B => {
                events.push((1, n, true));
                if reject_other {
                    events.push((0, n, false));
                }
            }
            Side::Abstain => {}
        }
    }
    events.shuffle(rng);
    for (e, n, approve) in events {
        // Votes into an already terminal epoch are refused; that is part of
        // the protocol, not a fuzzer failure.
        let _ = epochs[e].cast_vote(n, approve);
    }
    let trace: Vec<EpochRecord> = epochs.iter().map(EpochRecord::from).collect();
    Ok(!check_safety(&trace).is_safe())
}

/// One trial with Byzantine share strictly below `1 - q`.
pub fn safe_regime_trial(rng: &mut SimRng, q: f64) -> Result<FuzzOutcome> {
    let n_honest = rng.random_range(3..=40usize);
    let n_byz = rng.random_range(1..=10usize);
    let honest: Vec<f64> = (0..n_honest).map(|_| rng.random_range(0.3..=1.0)).collect();
    let h: f64 = honest.iter().sum();

    // Skew toward the bound, where an attack has the best chance.
    let u: f64 = rng.random();
    let share = (1.0 - q) * (1.0 - u * u * u) * (1.0 - 1e-6);
    let w_b = share / (1.0 - share) * h;
    let raw: Vec<f64> = (0..n_byz).map(|_| rng.random_range(0.05..=1.0)).collect();
    let raw_sum: f64 = raw.iter().sum();

    let mut weights = BTreeMap::new();
    for (i, &w) in honest.iter().enumerate() {
        weights.insert(i, w);
    }
    let byzantine: Vec<usize> = (0..n_byz).map(|j| n_honest + j).collect();
    for (j, &r) in raw.iter().enumerate() {
        weights.insert(n_honest + j, w_b * r / raw_sum);
    }

    let mut sides = BTreeMap::new();
    match rng.random_range(0..3u8) {
        0 => {
            for i in 0..n_honest {
                let side = [Side::A, Side::B, Side::Abstain][rng.random_range(0..3)];
                sides.insert(i, (side, rng.random_bool(0.5)));
            }
        }
        1 => {
            // Greedy balanced partition: the strongest honest split.
            let mut order: Vec<usize> = (0..n_honest).collect();
            order.sort_by(|&x, &y| honest[y].total_cmp(&honest[x]));
            let (mut wa, mut wb) = (0.0, 0.0);
            for i in order {
                if wa <= wb {
                    wa += honest[i];
                    sides.insert(i, (Side::A, false));
                } else {
                    wb += honest[i];
                    sides.insert(i, (Side::B, false));
                }
            }
        }
        _ => {
            for i in 0..n_honest {
                let side = if rng.random_bool(0.5) { Side::A } else { Side::B };
                sides.insert(i, (side, false));
            }
        }
    }
    let double_commit = play(&weights, &sides, &byzantine, op_for_quorum(q), rng)?;
    let total: f64 = weights.values().sum();
    Ok(FuzzOutcome {
        double_commit,
        byzantine_share: w_b / total,
    })
}

/// Exact subset sum over small integer weights; returns the chosen indices.
fn subset_with_sum(weights: &[u64], target: u64) -> Option<Vec<usize>> {
    let t = target as usize;
    // reach[s] = index of the item that first reached sum s
    let mut reach: Vec<Option<usize>> = vec![None; t + 1];
    let mut reached = vec![false; t + 1];
    reached[0] = true;
    for (i, &w) in weights.iter().enumerate() {
        let w = w as usize;
        for s in (w..=t).rev() {
            if !reached[s] && reached[s - w] {
                reached[s] = true;
                reach[s] = Some(i);
            }
        }
    }
    if !reached[t] {
        return None;
    }
    let mut picked = Vec::new();
    let mut s = t;
    while s > 0 {
        let i = reach[s]?;
        picked.push(i);
        s -= weights[i] as usize;
    }
    Some(picked)
}

/// One trial with Byzantine weight exactly `(2q - 1) W`, using integer
/// weight units so the split can be exact. The scheduler searches for an
/// honest partition into two equal halves; the trial reports no double
/// commit when none exists for the drawn weights.
pub fn boundary_trial(rng: &mut SimRng, q: f64) -> Result<FuzzOutcome> {
    let q_pct = (q * 100.0).round() as u64;
    let honest_pct = 200 - 2 * q_pct; // H / W in percent
    let byz_pct = 2 * q_pct - 100; // W_B / W in percent
    let g = gcd(100, honest_pct);
    // H must be a multiple of honest_pct/g (so W is integral) and even.
    let step = lcm(honest_pct / g, 2);

    let n_honest = rng.random_range(4..=30usize);
    let mut honest: Vec<u64> = (0..n_honest).map(|_| rng.random_range(30..=100)).collect();
    let h: u64 = honest.iter().sum();
    let pad = (step - h % step) % step;
    honest[n_honest - 1] += pad;
    let h = h + pad;
    let w_total = h * (100 / g) / (honest_pct / g);
    let w_b = w_total * byz_pct / 100;
    debug_assert_eq!(w_b + h, w_total);

    let n_byz = rng.random_range(1..=5usize).min(w_b.max(1) as usize);
    let mut byz = vec![w_b / n_byz as u64; n_byz];
    byz[0] += w_b - byz.iter().sum::<u64>();

    let mut weights = BTreeMap::new();
    for (i, &w) in honest.iter().enumerate() {
        weights.insert(i, w as f64);
    }
    let byzantine: Vec<usize> = (0..n_byz).map(|j| n_honest + j).collect();
    for (j, &w) in byz.iter().enumerate() {
        weights.insert(n_honest + j, w as f64);
    }
    let share = w_b as f64 / w_total as f64;

    let Some(half_a) = subset_with_sum(&honest, h / 2) else {
        return Ok(FuzzOutcome {
            double_commit: false,
            byzantine_share: share,
        });
    };
    let sides: BTreeMap<usize, (Side, bool)> = (0..n_honest)
        .map(|i| {
            let side = if half_a.contains(&i) { Side::A } else { Side::B };
            (i, (side, false))
        })
        .collect();
    let double_commit = play(&weights, &sides, &byzantine, op_for_quorum(q), rng)?;
    Ok(FuzzOutcome {
        double_commit,
        byzantine_share: share,
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamFactory;

    #[test]
    fn subset_sum_finds_exact_halves() {
        let w = [3, 1, 4, 2];
        let s = subset_with_sum(&w, 5).unwrap();
        assert_eq!(s.iter().map(|&i| w[i]).sum::<u64>(), 5);
        assert!(subset_with_sum(&[2, 4], 3).is_none());
    }

    #[test]
    fn safe_regime_small_run() {
        let f = StreamFactory::new(5);
        let mut rng = f.stream("fuzz", &[0]);
        for _ in 0..500 {
            let o = safe_regime_trial(&mut rng, 0.67).unwrap();
            assert!(o.byzantine_share < 0.33);
            assert!(!o.double_commit);
        }
    }

    #[test]
    fn boundary_weight_is_exact() {
        let f = StreamFactory::new(6);
        let mut rng = f.stream("fuzz", &[1]);
        let mut found = false;
        for _ in 0..50 {
            let o = boundary_trial(&mut rng, 0.67).unwrap();
            assert!((o.byzantine_share - 0.34).abs() < 1e-12);
            found |= o.double_commit;
        }
        assert!(found);
    }
}
