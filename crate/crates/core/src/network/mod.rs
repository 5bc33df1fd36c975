//! Simulated peer-to-peer substrate: identities, Kademlia routing with
//! reputation-aware eviction, iterative lookup, gossip, latency, churn.

mod churn;
mod gossip;
mod id;
mod kbucket;
mod latency;

pub use churn::{churn_step, ChurnEvents, RetentionStore};
pub use gossip::{gossip_broadcast, CoverageTrace, GossipMessage, GossipParams};
pub use id::{bucket_index, xor_distance, Distance, NodeId, Region, NUM_PROVIDERS, NUM_REGIONS};
pub use kbucket::{bucket_insert, Contact, InsertOutcome, KBucket, RoutingTable, DEFAULT_K, EVICTION_MARGIN};
pub use latency::{sample_latency, Endpoint, LatencyModel};

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;

use crate::error::{NexusError, Result};
use crate::rng::StreamFactory;

/// Default lookup parallelism.
pub const DEFAULT_ALPHA: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Peer {
    pub id: NodeId,
    pub region: Region,
    pub alive: bool,
    pub table: RoutingTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupResult {
    /// Up to K closest live nodes found, nearest first.
    pub closest: Vec<usize>,
    pub hops: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    peers: Vec<Peer>,
    k: usize,
}

impl Network {
    pub fn new(k: usize) -> Self {
        Self {
            peers: Vec::new(),
            k: k.max(1),
        }
    }

    /// `n` peers with seeded identities, regions assigned round-robin, and
    /// every routing table filled from the full membership.
    pub fn generate(n: usize, k: usize, factory: &StreamFactory, reputation: impl Fn(usize) -> f64) -> Self {
        let mut net = Self::new(k);
        for i in 0..n {
            let id = NodeId::random(&mut factory.stream("identity", &[i as u64]));
            net.add_peer(id, Region::round_robin(i));
        }
        net.populate(factory, reputation);
        net
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn add_peer(&mut self, id: NodeId, region: Region) -> usize {
        self.peers.push(Peer {
            id,
            region,
            alive: true,
            table: RoutingTable::new(id, self.k),
        });
        self.peers.len() - 1
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }

    pub fn peer(&self, node: usize) -> Option<&Peer> {
        self.peers.get(node)
    }

    pub fn peers(&self) -> &[Peer] {
        &self.peers
    }

    pub fn alive(&self) -> Vec<usize> {
        (0..self.peers.len()).filter(|&i| self.peers[i].alive).collect()
    }

    pub fn alive_count(&self) -> usize {
        self.peers.iter().filter(|p| p.alive).count()
    }

    fn contact(&self, node: usize, reputation: f64) -> Contact {
        Contact {
            node,
            id: self.peers[node].id,
            reputation,
        }
    }

    /// Every live peer offers every other live peer to its table, in a
    /// seeded random order per peer.
    pub fn populate(&mut self, factory: &StreamFactory, reputation: impl Fn(usize) -> f64) {
        let alive = self.alive();
        for &i in &alive {
            let mut order: Vec<usize> = alive.iter().copied().filter(|&j| j != i).collect();
            order.shuffle(&mut factory.stream("topology", &[i as u64]));
            for j in order {
                let c = self.contact(j, reputation(j));
                self.peers[i].table.insert(c);
            }
        }
    }

    /// Brings `node` online and exchanges contacts with every live peer.
    pub fn join(&mut self, node: usize, reputation: impl Fn(usize) -> f64) -> Result<()> {
        if node >= self.peers.len() {
            return Err(NexusError::UnknownVoter(node));
        }
        self.peers[node].alive = true;
        let alive = self.alive();
        for j in alive.into_iter().filter(|&j| j != node) {
            let cj = self.contact(j, reputation(j));
            let cn = self.contact(node, reputation(node));
            self.peers[node].table.insert(cj);
            self.peers[j].table.insert(cn);
        }
        Ok(())
    }

    /// Marks `node` offline. Stale contacts stay in other tables until
    /// replaced, as in a real DHT; lookups skip them.
    pub fn depart(&mut self, node: usize) {
        if let Some(p) = self.peers.get_mut(node) {
            p.alive = false;
        }
    }

    /// Live contacts of `node`.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        self.peers[node]
            .table
            .contacts()
            .map(|c| c.node)
            .filter(|&j| self.peers[j].alive)
            .collect()
    }

    /// Iterative lookup: each hop queries the `alpha` closest unqueried
    /// candidates and merges their answers; stops when a hop brings no node
    /// closer than the best already known.
    pub fn lookup(&self, origin: usize, target: &NodeId, alpha: usize) -> Result<LookupResult> {
        let peer = self
            .peers
            .get(origin)
            .ok_or_else(|| NexusError::InvalidArgument(format!("unknown origin {origin}")))?;
        if peer.table.is_empty() {
            return Err(NexusError::InvalidArgument(format!("origin {origin} has no contacts")));
        }
        let k = self.k;
        let mut shortlist: BTreeMap<Distance, usize> = BTreeMap::new();
        shortlist.insert(xor_distance(&peer.id, target), origin);
        if peer.id == *target {
            return Ok(LookupResult {
                closest: vec![origin],
                hops: 0,
            });
        }
        for c in peer.table.closest(target, k) {
            shortlist.insert(xor_distance(&c.id, target), c.node);
        }
        let mut queried: BTreeSet<usize> = BTreeSet::from([origin]);
        let mut dead: BTreeSet<usize> = BTreeSet::new();
        let mut hops = 0;
        loop {
            let best_before = self.best_live(&shortlist, &dead);
            let batch: Vec<usize> = shortlist
                .values()
                .copied()
                .filter(|n| !dead.contains(n))
                .take(k)
                .filter(|n| !queried.contains(n))
                .take(alpha.max(1))
                .collect();
            if batch.is_empty() {
                break;
            }
            hops += 1;
            for n in batch {
                queried.insert(n);
                if !self.peers[n].alive {
                    dead.insert(n);
                    continue;
                }
                for c in self.peers[n].table.closest(target, k) {
                    shortlist.insert(xor_distance(&c.id, target), c.node);
                }
            }
            let best_after = self.best_live(&shortlist, &dead);
            if best_after >= best_before {
                break;
            }
        }
        let closest = shortlist
            .values()
            .copied()
            .filter(|&n| self.peers[n].alive)
            .take(k)
            .collect();
        Ok(LookupResult { closest, hops })
    }

    fn best_live(&self, shortlist: &BTreeMap<Distance, usize>, dead: &BTreeSet<usize>) -> Option<Distance> {
        shortlist
            .iter()
            .find(|(_, n)| !dead.contains(n) && self.peers[**n].alive)
            .map(|(d, _)| *d)
            .or(Some(Distance([0xff; 32])))
    }

    /// Brute-force K closest live nodes to `target`.
    pub fn closest_alive(&self, target: &NodeId, k: usize) -> Vec<usize> {
        let mut all: Vec<(Distance, usize)> = self
            .peers
            .iter()
            .enumerate()
            .filter(|(_, p)| p.alive)
            .map(|(i, p)| (xor_distance(&p.id, target), i))
            .collect();
        all.sort();
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    /// Shortest path length over live routing-table edges.
    pub fn bfs_hops(&self, from: usize, to: usize) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.peers.len()];
        let mut queue = VecDeque::from([from]);
        dist[from] = 0;
        while let Some(u) = queue.pop_front() {
            if u == to {
                return Some(dist[u]);
            }
            for v in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mean_hops(n: usize, lookups: usize, seed: u64) -> f64 {
        let f = StreamFactory::new(seed);
        let net = Network::generate(n, DEFAULT_K, &f, |_| 0.5);
        let mut rng = f.stream("pairs", &[]);
        let total: usize = (0..lookups)
            .map(|_| {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                let r = net.lookup(a, &net.peers[b].id, DEFAULT_ALPHA).unwrap();
                assert_eq!(r.closest[0], b, "lookup must find an existing target");
                r.hops
            })
            .sum();
        total as f64 / lookups as f64
    }

    #[test]
    fn self_lookup_is_free() {
        let f = StreamFactory::new(1);
        let net = Network::generate(30, DEFAULT_K, &f, |_| 0.5);
        let r = net.lookup(4, &net.peers[4].id, 3).unwrap();
        assert_eq!(r.hops, 0);
        assert_eq!(r.closest, vec![4]);
    }

    #[test]
    fn small_network_hops() {
        assert!(mean_hops(100, 1000, 3) <= 8.0);
    }

    #[test]
    fn lookup_agrees_with_brute_force() {
        let f = StreamFactory::new(9);
        let net = Network::generate(300, DEFAULT_K, &f, |_| 0.5);
        let mut rng = f.stream("keys", &[]);
        for _ in 0..50 {
            let key = NodeId::random(&mut rng);
            let origin = rng.random_range(0..300);
            let r = net.lookup(origin, &key, DEFAULT_ALPHA).unwrap();
            assert_eq!(r.closest[0], net.closest_alive(&key, 1)[0]);
            // The path found is never shorter than the graph distance.
            let bfs = net.bfs_hops(origin, r.closest[0]).unwrap();
            assert!(bfs <= r.hops.max(1) || r.closest[0] == origin);
        }
    }

    #[test]
    fn lookup_skips_departed_nodes() {
        let f = StreamFactory::new(4);
        let mut net = Network::generate(200, DEFAULT_K, &f, |_| 0.5);
        for i in (0..200).step_by(3) {
            net.depart(i);
        }
        let target = net.peers[1].id;
        let r = net.lookup(2, &target, DEFAULT_ALPHA).unwrap();
        assert!(r.closest.iter().all(|&n| net.peers[n].alive));
        assert_eq!(r.closest[0], 1);
    }

    #[test]
    fn join_restores_membership() {
        let f = StreamFactory::new(4);
        let mut net = Network::generate(50, DEFAULT_K, &f, |_| 0.5);
        net.depart(7);
        assert!(!net.neighbors(0).contains(&7) || net.peers[7].alive);
        net.join(7, |_| 0.5).unwrap();
        assert!(net.peers[7].alive);
        assert!(!net.neighbors(7).is_empty());
        assert!(net.join(99, |_| 0.5).is_err());
    }
}
