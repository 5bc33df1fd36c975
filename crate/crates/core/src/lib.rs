// Range checks are written as `!(lo <= x && x <= hi)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjudication;
pub mod adversary;
pub mod aggregation;
pub mod consensus;
pub mod error;
pub mod learner;
pub mod network;
pub mod reputation;
pub mod rng;
pub mod selection;
pub mod sim;

pub use error::{NexusError, Result};
