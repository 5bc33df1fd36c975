use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{NexusError, Result};

/// Departures and arrivals drawn for one churn step.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChurnEvents {
    pub departures: Vec<usize>,
    pub arrivals: usize,
}

impl ChurnEvents {
    pub fn is_empty(&self) -> bool {
        self.departures.is_empty() && self.arrivals == 0
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    match Poisson::new(mean) {
        Ok(d) => d.sample(rng) as u64,
        Err(_) => 0,
    }
}

/// Departures and arrivals are each Poisson(rate * n * dt), with `rate` a
/// fraction of the population per minute and `dt` in minutes. Departing
/// nodes are drawn uniformly from `alive`.
pub fn churn_step<R: Rng + ?Sized>(alive: &[usize], rate: f64, dt: f64, rng: &mut R) -> Result<ChurnEvents> {
    if !(rate.is_finite() && rate >= 0.0) || !(dt.is_finite() && dt >= 0.0) {
        return Err(NexusError::InvalidArgument(format!(
            "churn rate and dt must be finite and >= 0, got {rate} and {dt}"
        )));
    }
    let mean = rate * alive.len() as f64 * dt;
    if mean == 0.0 {
        return Ok(ChurnEvents::default());
    }
    let d = (poisson(mean, rng) as usize).min(alive.len());
    let mut departures: Vec<usize> = alive.choose_multiple(rng, d).copied().collect();
    departures.sort_unstable();
    let arrivals = poisson(mean, rng) as usize;
    Ok(ChurnEvents { departures, arrivals })
}

/// State held for departed nodes so a return within the retention window
/// restores it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionStore<T> {
    window: u64,
    departed: BTreeMap<usize, (u64, T)>,
}

impl<T> RetentionStore<T> {
    pub fn new(window: u64) -> Self {
        Self {
            window,
            departed: BTreeMap::new(),
        }
    }

    pub fn depart(&mut self, node: usize, round: u64, state: T) {
        self.departed.insert(node, (round, state));
    }

    /// State to restore on return, or `None` when the node was gone longer
    /// than the window (or never departed).
    pub fn rejoin(&mut self, node: usize, round: u64) -> Option<T> {
        let (left, state) = self.departed.remove(&node)?;
        (round.saturating_sub(left) <= self.window).then_some(state)
    }

    pub fn departed(&self) -> impl Iterator<Item = usize> + '_ {
        self.departed.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.departed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.departed.is_empty()
    }
}
