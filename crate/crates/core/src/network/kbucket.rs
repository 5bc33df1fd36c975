use serde::{Deserialize, Serialize};

use super::id::{bucket_index, xor_distance, NodeId};

/// Default bucket capacity.
pub const DEFAULT_K: usize = 20;

/// Reputation margin a newcomer must exceed to evict an incumbent.
pub const EVICTION_MARGIN: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub node: usize,
    pub id: NodeId,
    pub reputation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InsertOutcome {
    Inserted,
    /// Already present; its reputation was refreshed.
    Refreshed,
    Evicted(Contact),
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KBucket {
    capacity: usize,
    contacts: Vec<Contact>,
}

impl KBucket {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            contacts: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.contacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.contacts.len() >= self.capacity
    }

    pub fn contacts(&self) -> &[Contact] {
        &self.contacts
    }

    pub fn remove(&mut self, node: usize) -> Option<Contact> {
        let pos = self.contacts.iter().position(|c| c.node == node)?;
        Some(self.contacts.remove(pos))
    }

    /// Lowest-reputation member; the earliest inserted wins ties.
    fn weakest(&self) -> Option<usize> {
        self.contacts
            .iter()
            .enumerate()
            .min_by(|(i, a), (j, b)| a.reputation.total_cmp(&b.reputation).then(i.cmp(j)))
            .map(|(i, _)| i)
    }
}

/// Appends while there is room. When full, the newcomer replaces the
/// lowest-reputation incumbent only if it beats it by more than the margin.
pub fn bucket_insert(bucket: &mut KBucket, contact: Contact) -> InsertOutcome {
    if let Some(existing) = bucket.contacts.iter_mut().find(|c| c.node == contact.node) {
        existing.reputation = contact.reputation;
        return InsertOutcome::Refreshed;
    }
    if !bucket.is_full() {
        bucket.contacts.push(contact);
        return InsertOutcome::Inserted;
    }
    let Some(w) = bucket.weakest() else {
        return InsertOutcome::Dropped;
    };
    if contact.reputation > bucket.contacts[w].reputation + EVICTION_MARGIN {
        let evicted = bucket.contacts.remove(w);
        bucket.contacts.push(contact);
        InsertOutcome::Evicted(evicted)
    } else {
        InsertOutcome::Dropped
    }
}

/// A node's Kademlia routing table: one bucket per distance prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTable {
    owner: NodeId,
    buckets: Vec<KBucket>,
}

impl RoutingTable {
    pub fn new(owner: NodeId, k: usize) -> Self {
        Self {
            owner,
            buckets: vec![KBucket::new(k); 256],
        }
    }

    pub fn owner(&self) -> &NodeId {
        &self.owner
    }

    pub fn insert(&mut self, contact: Contact) -> InsertOutcome {
        match bucket_index(&self.owner, &contact.id) {
            Some(i) => bucket_insert(&mut self.buckets[i], contact),
            None => InsertOutcome::Dropped,
        }
    }

    pub fn remove(&mut self, contact: &Contact) -> Option<Contact> {
        let i = bucket_index(&self.owner, &contact.id)?;
        self.buckets[i].remove(contact.node)
    }

    pub fn bucket(&self, index: usize) -> &KBucket {
        &self.buckets[index]
    }

    pub fn contacts(&self) -> impl Iterator<Item = &Contact> {
        self.buckets.iter().flat_map(|b| b.contacts.iter())
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(KBucket::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Up to `k` known contacts closest to `target`.
    pub fn closest(&self, target: &NodeId, k: usize) -> Vec<Contact> {
        let mut all: Vec<Contact> = self.contacts().copied().collect();
        all.sort_by_key(|c| xor_distance(&c.id, target));
        all.truncate(k);
        all
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamFactory;
    use proptest::prelude::*;

    fn contact(node: usize, reputation: f64) -> Contact {
        let mut rng = StreamFactory::new(node as u64).stream("id", &[]);
        Contact {
            node,
            id: NodeId::random(&mut rng),
            reputation,
        }
    }

    fn full_bucket(k: usize, incumbent_rep: f64) -> KBucket {
        let mut b = KBucket::new(k);
        bucket_insert(&mut b, contact(0, incumbent_rep));
        for i in 1..k {
            bucket_insert(&mut b, contact(i, 0.9));
        }
        b
    }

    #[test]
    fn margin_examples() {
        let mut b = full_bucket(20, 0.6);
        assert_eq!(bucket_insert(&mut b, contact(100, 0.70)), InsertOutcome::Dropped);
        // Exactly at the margin is not enough.
        assert_eq!(bucket_insert(&mut b, contact(101, 0.75)), InsertOutcome::Dropped);
        match bucket_insert(&mut b, contact(102, 0.76)) {
            InsertOutcome::Evicted(c) => assert_eq!(c.node, 0),
            other => panic!("expected eviction, got {other:?}"),
        }
        assert_eq!(b.len(), 20);
    }

    #[test]
    fn room_means_insert() {
        let mut b = KBucket::new(20);
        for i in 0..19 {
            bucket_insert(&mut b, contact(i, 0.9));
        }
        assert_eq!(bucket_insert(&mut b, contact(50, 0.0)), InsertOutcome::Inserted);
        assert_eq!(bucket_insert(&mut b, contact(50, 0.2)), InsertOutcome::Refreshed);
    }

    proptest! {
        #[test]
        fn eviction_only_removes_the_minimum(
            reps in proptest::collection::vec(0.0f64..1.0, 1..60),
            k in 1usize..8,
        ) {
            let mut b = KBucket::new(k);
            for (i, &r) in reps.iter().enumerate() {
                let min_before = b.contacts().iter().map(|c| c.reputation).fold(f64::INFINITY, f64::min);
                let full = b.is_full();
                match bucket_insert(&mut b, contact(i, r)) {
                    InsertOutcome::Evicted(c) => {
                        prop_assert!(full);
                        prop_assert_eq!(c.reputation, min_before);
                        prop_assert!(r > c.reputation + EVICTION_MARGIN);
                    }
                    InsertOutcome::Dropped => prop_assert!(full && r <= min_before + EVICTION_MARGIN),
                    _ => {}
                }
                prop_assert!(b.len() <= k);
            }
        }
    }
}
