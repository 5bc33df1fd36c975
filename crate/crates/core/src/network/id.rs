use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NexusError, Result};

/// 256-bit peer identifier, the SHA-256 of a public key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub [u8; 32]);

impl NodeId {
    pub fn from_public_key(pk: &[u8]) -> Self {
        NodeId(Sha256::digest(pk).into())
    }

    /// Id for a freshly generated simulated key pair.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut pk = [0u8; 32];
        rng.fill(&mut pk);
        Self::from_public_key(&pk)
    }

    /// First eight bytes, used as a stable tie-break hash.
    pub fn short(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().expect("8 bytes"))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// XOR distance, ordered as a big-endian unsigned integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Distance(pub [u8; 32]);

impl Distance {
    pub const ZERO: Distance = Distance([0; 32]);

    pub fn leading_zeros(&self) -> u32 {
        let mut n = 0;
        for b in self.0 {
            if b == 0 {
                n += 8;
            } else {
                return n + b.leading_zeros();
            }
        }
        n
    }

    pub fn xor(&self, other: &Distance) -> Distance {
        let mut out = [0u8; 32];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        Distance(out)
    }
}

pub fn xor_distance(a: &NodeId, b: &NodeId) -> Distance {
    Distance(a.0).xor(&Distance(b.0))
}

/// Bucket index of `other` in `owner`'s table: position of the highest
/// differing bit, 255 for the far half down to 0. `None` for `owner` itself.
pub fn bucket_index(owner: &NodeId, other: &NodeId) -> Option<usize> {
    let lz = xor_distance(owner, other).leading_zeros();
    (lz < 256).then(|| 255 - lz as usize)
}

pub const NUM_PROVIDERS: u8 = 3;
pub const REGIONS_PER_PROVIDER: u8 = 3;
pub const NUM_REGIONS: u8 = NUM_PROVIDERS * REGIONS_PER_PROVIDER;

const REGION_NAMES: [&str; NUM_REGIONS as usize] = [
    "aws-us-east",
    "aws-eu-west",
    "aws-ap-south",
    "gcp-us-central",
    "gcp-eu-north",
    "gcp-asia-east",
    "azure-us-west",
    "azure-eu-central",
    "azure-ap-southeast",
];

/// One of nine cloud regions, three per provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Region(u8);

impl Region {
    pub fn new(index: u8) -> Result<Self> {
        if index >= NUM_REGIONS {
            return Err(NexusError::InvalidArgument(format!(
                "region index {index} out of range 0..{NUM_REGIONS}"
            )));
        }
        Ok(Region(index))
    }

    /// Region for the i-th node when nodes are spread round-robin.
    pub fn round_robin(i: usize) -> Self {
        Region((i % NUM_REGIONS as usize) as u8)
    }

    pub fn index(&self) -> u8 {
        self.0
    }

    pub fn provider(&self) -> u8 {
        self.0 / REGIONS_PER_PROVIDER
    }

    pub fn name(&self) -> &'static str {
        REGION_NAMES[self.0 as usize]
    }
}
