use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::id::Region;
use crate::error::{NexusError, Result};

/// Log-normal round-trip-time model keyed on region relationship.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyModel {
    pub intra_region_ms: f64,
    pub same_provider_ms: f64,
    pub cross_provider_ms: f64,
    /// Coefficient of variation of every pair distribution.
    pub cv: f64,
    pub loopback_ms: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            intra_region_ms: 12.0,
            same_provider_ms: 40.0,
            cross_provider_ms: 87.0,
            cv: 0.2,
            loopback_ms: 1.0,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        let medians = [
            self.intra_region_ms,
            self.same_provider_ms,
            self.cross_provider_ms,
            self.loopback_ms,
        ];
        if medians.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(NexusError::InvalidArgument("latency medians must be positive".into()));
        }
        if !(self.cv.is_finite() && self.cv >= 0.0) {
            return Err(NexusError::InvalidArgument(format!(
                "latency cv must be >= 0, got {}",
                self.cv
            )));
        }
        Ok(())
    }

    pub fn median_ms(&self, a: Region, b: Region) -> f64 {
        if a == b {
            self.intra_region_ms
        } else if a.provider() == b.provider() {
            self.same_provider_ms
        } else {
            self.cross_provider_ms
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Endpoint {
    pub node: usize,
    pub region: Region,
}

/// RTT in milliseconds; log-normal with the pair's median and the model's
/// coefficient of variation. The same node gets the loopback floor.
pub fn sample_latency<R: Rng + ?Sized>(model: &LatencyModel, a: Endpoint, b: Endpoint, rng: &mut R) -> f64 {
    if a.node == b.node {
        return model.loopback_ms;
    }
    let median = model.median_ms(a.region, b.region);
    let sigma = (1.0 + model.cv * model.cv).ln().sqrt();
    match LogNormal::new(median.ln(), sigma) {
        Ok(d) => d.sample(rng).max(f64::MIN_POSITIVE),
        Err(_) => median,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamFactory;

    fn sample_median(a: Region, b: Region) -> f64 {
        let m = LatencyModel::default();
        let mut rng = StreamFactory::new(1).stream("lat", &[a.index() as u64, b.index() as u64]);
        let mut v: Vec<f64> = (0..100_000)
            .map(|_| {
                sample_latency(
                    &m,
                    Endpoint { node: 0, region: a },
                    Endpoint { node: 1, region: b },
                    &mut rng,
                )
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn medians_match_configuration() {
        let r = |i| Region::new(i).unwrap();
        assert!((sample_median(r(0), r(0)) / 12.0 - 1.0).abs() < 0.05);
        assert!((sample_median(r(0), r(1)) / 40.0 - 1.0).abs() < 0.05);
        assert!((sample_median(r(0), r(4)) / 87.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn loopback_and_positivity() {
        let m = LatencyModel::default();
        let e = Endpoint {
            node: 3,
            region: Region::round_robin(3),
        };
        let mut rng = StreamFactory::new(2).stream("lat", &[]);
        assert_eq!(sample_latency(&m, e, e, &mut rng), 1.0);
        let f = Endpoint {
            node: 4,
            region: Region::round_robin(7),
        };
        assert!((0..1000).all(|_| sample_latency(&m, e, f, &mut rng) > 0.0));
        assert!(LatencyModel { cv: -1.0, ..m }.validate().is_err());
    }
}
