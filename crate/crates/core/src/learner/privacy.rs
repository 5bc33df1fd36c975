use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

/// Integer Renyi orders searched during conversion to `(epsilon, delta)`.
pub const RDP_ORDERS: RangeInclusive<u32> = 2..=256;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Renyi divergence of order `alpha` for one step of the Poisson-subsampled
/// Gaussian mechanism with sample rate `q` and noise multiplier `sigma`.
///
/// Uses the exact binomial expansion valid for integer orders:
/// `A = sum_k C(alpha, k) (1-q)^(alpha-k) q^k exp((k^2 - k) / (2 sigma^2))`,
/// returning `ln(A) / (alpha - 1)`.
pub fn subsampled_gaussian_rdp(q: f64, sigma: f64, alpha: u32) -> f64 {
    if sigma <= 0.0 {
        return f64::INFINITY;
    }
    if q <= 0.0 {
        return 0.0;
    }
    let a = alpha as f64;
    if q >= 1.0 {
        return a / (2.0 * sigma * sigma);
    }
    let (ln_q, ln_1mq) = (q.ln(), (-q).ln_1p());
    let mut log_binom = 0.0;
    let mut log_a = f64::NEG_INFINITY;
    for k in 0..=alpha {
        let kf = k as f64;
        let term = log_binom + (a - kf) * ln_1mq + kf * ln_q + (kf * kf - kf) / (2.0 * sigma * sigma);
        log_a = log_add(log_a, term);
        log_binom += (a - kf).ln() - (kf + 1.0).ln();
    }
    log_a / (a - 1.0)
}

/// Record-level epsilon after `steps` compositions, minimized over the
/// integer orders `2..=256` with `eps(alpha) = steps * RDP(alpha) + ln(1/delta) / (alpha - 1)`.
///
/// `sigma == 0` yields `+inf`; `steps == 0` yields `0`.
pub fn rdp_epsilon(q: f64, sigma: f64, steps: u64, delta: f64) -> f64 {
    if steps == 0 {
        return 0.0;
    }
    if sigma <= 0.0 {
        return f64::INFINITY;
    }
    let log_inv_delta = (1.0 / delta).ln();
    RDP_ORDERS
        .map(|alpha| steps as f64 * subsampled_gaussian_rdp(q, sigma, alpha) + log_inv_delta / (alpha as f64 - 1.0))
        .fold(f64::INFINITY, f64::min)
}

/// Per-node DP-SGD bookkeeping across rounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    entries: BTreeMap<usize, LedgerEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub steps: u64,
    pub participations: u64,
    pub sample_rate: f64,
}

impl PrivacyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, node: usize, steps: u64, sample_rate: f64) {
        let e = self.entries.entry(node).or_default();
        e.steps += steps;
        e.participations += 1;
        e.sample_rate = e.sample_rate.max(sample_rate);
    }

    pub fn entry(&self, node: usize) -> Option<LedgerEntry> {
        self.entries.get(&node).copied()
    }

    /// Largest participation count over all nodes.
    pub fn max_participation(&self) -> u64 {
        self.entries.values().map(|e| e.participations).max().unwrap_or(0)
    }

    /// Worst-case epsilon over all recorded nodes.
    pub fn worst_epsilon(&self, sigma: f64, delta: f64) -> f64 {
        self.entries
            .values()
            .map(|e| rdp_epsilon(e.sample_rate, sigma, e.steps, delta))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases() {
        assert_eq!(rdp_epsilon(0.1, 1.0, 0, 1e-5), 0.0);
        assert_eq!(rdp_epsilon(0.1, 0.0, 10, 1e-5), f64::INFINITY);
        // Full-batch Gaussian: RDP(alpha) = alpha / (2 sigma^2).
        assert!((subsampled_gaussian_rdp(1.0, 2.0, 8) - 1.0).abs() < 1e-12);
        assert!((subsampled_gaussian_rdp(1.0 - 1e-12, 2.0, 8) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ledger_tracks_worst_node() {
        let mut l = PrivacyLedger::new();
        l.record(1, 285, 4.0 / 225.0);
        l.record(1, 285, 4.0 / 225.0);
        l.record(2, 285, 4.0 / 225.0);
        assert_eq!(l.max_participation(), 2);
        assert_eq!(l.entry(1).unwrap().steps, 570);
        let worst = l.worst_epsilon(1.1, 1e-5);
        assert_eq!(worst, rdp_epsilon(4.0 / 225.0, 1.1, 570, 1e-5));
    }
}
