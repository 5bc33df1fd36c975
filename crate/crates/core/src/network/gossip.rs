use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{NexusError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GossipParams {
    pub fanout: usize,
    pub ttl: u32,
    /// Messages a node accepts per round; the rest are dropped lowest
    /// sender reputation first.
    pub queue_capacity: usize,
}

impl Default for GossipParams {
    fn default() -> Self {
        Self {
            fanout: 6,
            ttl: 7,
            queue_capacity: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GossipMessage {
    pub digest: u64,
    pub origin: usize,
    pub ttl: u32,
    pub hops: u32,
    pub sender_reputation: f64,
}

/// Fraction of live nodes holding the message after each round; index 0 is
/// the state before any forwarding.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageTrace {
    pub per_round: Vec<f64>,
    pub messages_sent: usize,
    pub queue_drops: usize,
}

impl CoverageTrace {
    /// Coverage after `round` rounds; flat once propagation has stopped.
    pub fn coverage_at(&self, round: usize) -> f64 {
        let last = self.per_round.len() - 1;
        self.per_round[round.min(last)]
    }

    pub fn final_coverage(&self) -> f64 {
        *self.per_round.last().expect("trace has round 0")
    }
}

/// Synchronous push gossip. Every holder with remaining TTL forwards a copy
/// to `fanout` random live contacts each round; its own TTL then drops by
/// one, and receivers hold the message with the sender's TTL minus one.
pub fn gossip_broadcast<R: Rng + ?Sized>(
    net: &Network,
    origin: usize,
    digest: u64,
    params: &GossipParams,
    reputation: impl Fn(usize) -> f64,
    rng: &mut R,
) -> Result<CoverageTrace> {
    if !net.peer(origin).is_some_and(|p| p.alive) {
        return Err(NexusError::InvalidArgument(format!(
            "gossip origin {origin} is not alive"
        )));
    }
    let n = net.alive_count() as f64;
    let mut held: Vec<Option<GossipMessage>> = vec![None; net.len()];
    held[origin] = Some(GossipMessage {
        digest,
        origin,
        ttl: params.ttl,
        hops: 0,
        sender_reputation: reputation(origin),
    });
    let mut count = 1usize;
    let mut trace = CoverageTrace {
        per_round: vec![1.0 / n],
        messages_sent: 0,
        queue_drops: 0,
    };
    let neighbor_lists: Vec<Vec<usize>> = (0..net.len()).map(|i| net.neighbors(i)).collect();

    loop {
        let senders: Vec<usize> = (0..net.len()).filter(|&i| held[i].is_some_and(|m| m.ttl > 0)).collect();
        if senders.is_empty() {
            break;
        }
        let mut inbox: Vec<Vec<GossipMessage>> = vec![Vec::new(); net.len()];
        for &s in &senders {
            let msg = held[s].expect("sender holds the message");
            let sender_rep = reputation(s);
            for &t in neighbor_lists[s].choose_multiple(rng, params.fanout) {
                inbox[t].push(GossipMessage {
                    digest,
                    origin,
                    ttl: msg.ttl - 1,
                    hops: msg.hops + 1,
                    sender_reputation: sender_rep,
                });
                trace.messages_sent += 1;
            }
            if let Some(m) = held[s].as_mut() {
                m.ttl -= 1;
            }
        }
        for (t, mut msgs) in inbox.into_iter().enumerate() {
            if msgs.is_empty() {
                continue;
            }
            if msgs.len() > params.queue_capacity {
                msgs.sort_by(|a, b| b.sender_reputation.total_cmp(&a.sender_reputation));
                trace.queue_drops += msgs.len() - params.queue_capacity;
                msgs.truncate(params.queue_capacity);
            }
            if held[t].is_none() {
                if let Some(best) = msgs.into_iter().max_by_key(|m| m.ttl) {
                    held[t] = Some(best);
                    count += 1;
                }
            }
        }
        trace.per_round.push(count as f64 / n);
    }
    Ok(trace)
}
