//! Offline reinforcement learning benchmark for instruction-guided navigation.
//!
//! The crate generates metric navigation worlds with template instructions,
//! logs suboptimal demonstrations under several behavior policies, trains
//! reward-token conditioned behavior-cloning policies, and evaluates them
//! with the standard navigation metrics.

pub mod conditioning;
pub mod envgen;
pub mod error;
pub mod evalanalyze;
pub mod experiment;
pub mod policy;
pub mod rng;
pub mod rollout;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}
