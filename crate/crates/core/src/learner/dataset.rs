use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NexusError, Result};
use crate::rng::SimRng;

/// Labeled feature rows, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Examples {
    pub dim: usize,
    pub classes: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Examples {
    pub fn empty(dim: usize, classes: usize) -> Self {
        Self {
            dim,
            classes,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, row: &[f64], label: usize) {
        debug_assert_eq!(row.len(), self.dim);
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    pub fn subset(&self, indices: &[usize]) -> Examples {
        let mut out = Examples::empty(self.dim, self.classes);
        out.features.reserve(indices.len() * self.dim);
        for &i in indices {
            out.push(self.row(i), self.labels[i]);
        }
        out
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Splits into `parts` contiguous chunks of near-equal size.
    pub fn chunks(&self, parts: usize) -> Vec<Examples> {
        let n = self.len();
        (0..parts)
            .map(|p| {
                let lo = p * n / parts;
                let hi = (p + 1) * n / parts;
                self.subset(&(lo..hi).collect::<Vec<_>>())
            })
            .collect()
    }
}

/// Gaussian mixture with one unit-variance spherical component per class.
///
/// Component means are drawn from the seed and rescaled so the closest pair
/// sits exactly `class_separation` apart. Labels cycle through the classes,
/// so every class is present whenever `n >= classes`.
pub fn generate_dataset(classes: usize, dim: usize, n: usize, class_separation: f64, seed: u64) -> Result<Examples> {
    if classes < 2 || dim == 0 || n < classes {
        return Err(NexusError::InvalidArgument(format!(
            "dataset needs classes >= 2, dim >= 1, n >= classes (got {classes}, {dim}, {n})"
        )));
    }
    if !(class_separation >= 0.0 && class_separation.is_finite()) {
        return Err(NexusError::InvalidArgument(
            "class_separation must be finite and non-negative".into(),
        ));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let raw: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..classes {
        for b in (a + 1)..classes {
            let d: f64 = raw[a]
                .iter()
                .zip(&raw[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    let scale = if class_separation == 0.0 {
        0.0
    } else {
        class_separation / min_dist
    };
    let means: Vec<Vec<f64>> = raw
        .into_iter()
        .map(|m| m.into_iter().map(|x| x * scale).collect())
        .collect();

    let mut out = Examples::empty(dim, classes);
    out.features.reserve(n * dim);
    let mut row = vec![0.0; dim];
    for i in 0..n {
        let label = i % classes;
        for (slot, mu) in row.iter_mut().zip(&means[label]) {
            let z: f64 = rng.sample(StandardNormal);
            *slot = mu + z;
        }
        out.push(&row, label);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Examples,
    /// Public benchmark used by evaluators and the regression check.
    pub validation: Examples,
    /// Held out for final reporting only.
    pub test: Examples,
}

/// Shuffles and carves out a 10% validation slice and a disjoint 20% test slice.
pub fn split_holdout(data: &Examples, seed: u64) -> DatasetSplits {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut SimRng::seed_from_u64(seed));
    let n = data.len();
    let n_val = n / 10;
    let n_test = n / 5;
    DatasetSplits {
        validation: data.subset(&idx[..n_val]),
        test: data.subset(&idx[n_val..n_val + n_test]),
        train: data.subset(&idx[n_val + n_test..]),
    }
}

/// Label-skewed but size-balanced partition.
///
/// Each node draws class proportions from `Dirichlet(alpha_dir)` and turns
/// them into integer class quotas for an equal share of the data (sizes differ
/// by at most one). Oversubscribed classes are scaled down across the nodes
/// that want them, and the freed slots are refilled from classes with spare
/// examples, preferring each node's own high-proportion classes.
pub fn partition_dirichlet(data: &Examples, num_nodes: usize, alpha_dir: f64, seed: u64) -> Result<Vec<Examples>> {
    if num_nodes == 0 {
        return Err(NexusError::InvalidArgument("num_nodes must be positive".into()));
    }
    if !(alpha_dir > 0.0) {
        return Err(NexusError::InvalidArgument("alpha_dir must be positive".into()));
    }
    let classes = data.classes;
    let mut rng = SimRng::seed_from_u64(seed);
    let gamma =
        Gamma::new(alpha_dir, 1.0).map_err(|e| NexusError::InvalidArgument(format!("dirichlet concentration: {e}")))?;
    let proportions: Vec<Vec<f64>> = (0..num_nodes)
        .map(|_| {
            let draws: Vec<f64> = (0..classes).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 && total.is_finite() {
                draws.into_iter().map(|g| g / total).collect()
            } else {
                // Very small concentrations can underflow every draw.
                let hot = rng.random_range(0..classes);
                (0..classes).map(|c| if c == hot { 1.0 } else { 0.0 }).collect()
            }
        })
        .collect();

    let n = data.len();
    let sizes: Vec<usize> = (0..num_nodes)
        .map(|i| (i + 1) * n / num_nodes - i * n / num_nodes)
        .collect();
    let supply = data.class_histogram();

    let mut quota: Vec<Vec<usize>> = proportions
        .iter()
        .zip(&sizes)
        .map(|(p, &size)| round_to_total(&p.iter().map(|x| x * size as f64).collect::<Vec<_>>(), size))
        .collect();

    // Scale oversubscribed classes down to their supply.
    for c in 0..classes {
        let demand: usize = quota.iter().map(|q| q[c]).sum();
        if demand > supply[c] {
            let wanted: Vec<f64> = quota
                .iter()
                .map(|q| q[c] as f64 * supply[c] as f64 / demand as f64)
                .collect();
            let granted = round_to_total(&wanted, supply[c]);
            for (q, g) in quota.iter_mut().zip(granted) {
                q[c] = g;
            }
        }
    }

    // Refill freed slots from spare supply.
    let mut spare: Vec<usize> = (0..classes)
        .map(|c| supply[c] - quota.iter().map(|q| q[c]).sum::<usize>())
        .collect();
    let mut missing: Vec<usize> = quota
        .iter()
        .zip(&sizes)
        .map(|(q, &size)| size - q.iter().sum::<usize>())
        .collect();
    while missing.iter().any(|&m| m > 0) {
        for node in 0..num_nodes {
            if missing[node] == 0 {
                continue;
            }
            let c = (0..classes)
                .filter(|&c| spare[c] > 0)
                .max_by(|&a, &b| {
                    proportions[node][a]
                        .total_cmp(&proportions[node][b])
                        .then(spare[a].cmp(&spare[b]))
                        .then(b.cmp(&a))
                })
                .expect("spare supply matches missing slots");
            quota[node][c] += 1;
            spare[c] -= 1;
            missing[node] -= 1;
        }
    }

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in data.labels.iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let shards = quota
        .iter()
        .map(|q| {
            let mut idx = Vec::new();
            for (c, &count) in q.iter().enumerate() {
                let at = pools[c].len() - count;
                idx.extend(pools[c].drain(at..));
            }
            idx.shuffle(&mut rng);
            data.subset(&idx)
        })
        .collect();
    Ok(shards)
}

/// Largest-remainder rounding of nonnegative `values` to integers summing to `total`.
fn round_to_total(values: &[f64], total: usize) -> Vec<usize> {
    let mut out: Vec<usize> = values.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = values[a] - values[a].floor();
        let rb = values[b] - values[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_reproducible() {
        let a = generate_dataset(10, 32, 500, 4.0, 9).unwrap();
        let b = generate_dataset(10, 32, 500, 4.0, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.class_histogram().iter().all(|&c| c == 50));
        assert!(generate_dataset(10, 32, 5, 4.0, 9).is_err());
    }

    #[test]
    fn means_respect_minimum_separation() {
        // Class averages of a large sample approximate the component means.
        let data = generate_dataset(4, 8, 40_000, 6.0, 2).unwrap();
        let mut sums = vec![vec![0.0; 8]; 4];
        for i in 0..data.len() {
            for (s, x) in sums[data.labels[i]].iter_mut().zip(data.row(i)) {
                *s += x;
            }
        }
        let means: Vec<Vec<f64>> = sums
            .into_iter()
            .map(|s| s.into_iter().map(|x| x / 10_000.0).collect())
            .collect();
        for a in 0..4 {
            for b in (a + 1)..4 {
                let d: f64 = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d > 6.0 - 0.15, "{d}");
            }
        }
    }

    #[test]
    fn holdout_slices_are_disjoint_and_sized() {
        let data = generate_dataset(10, 4, 1000, 3.0, 1).unwrap();
        let s = split_holdout(&data, 3);
        assert_eq!(s.validation.len(), 100);
        assert_eq!(s.test.len(), 200);
        assert_eq!(s.train.len(), 700);
    }

    #[test]
    fn partition_conserves_and_balances() {
        let data = generate_dataset(10, 4, 2251, 3.0, 1).unwrap();
        for alpha in [0.1, 0.5, 1.0, 1e6] {
            let shards = partition_dirichlet(&data, 10, alpha, 5).unwrap();
            let sizes: Vec<usize> = shards.iter().map(Examples::len).collect();
            assert_eq!(sizes.iter().sum::<usize>(), 2251);
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(hi - lo <= 1, "{sizes:?}");
        }
    }

    #[test]
    fn huge_concentration_gives_uniform_histograms() {
        let data = generate_dataset(10, 4, 10_000, 3.0, 1).unwrap();
        let shards = partition_dirichlet(&data, 10, 1e6, 5).unwrap();
        for shard in shards {
            for c in shard.class_histogram() {
                assert!((c as f64 - 100.0).abs() <= 10.0, "{c}");
            }
        }
    }

    #[test]
    fn small_concentration_gives_dominant_classes() {
        let data = generate_dataset(10, 4, 4_500, 3.0, 1).unwrap();
        let mut medians = Vec::new();
        for seed in 0..10 {
            let shards = partition_dirichlet(&data, 20, 0.1, seed).unwrap();
            let mut shares: Vec<f64> = shards
                .iter()
                .map(|s| *s.class_histogram().iter().max().unwrap() as f64 / s.len() as f64)
                .collect();
            shares.sort_by(f64::total_cmp);
            medians.push(shares[shares.len() / 2]);
        }
        medians.sort_by(f64::total_cmp);
        assert!(medians[medians.len() / 2] > 0.5, "{medians:?}");
    }
}
