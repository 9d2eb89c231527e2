//! Deterministic seed derivation.
//!
//! Every random draw in a run descends from the single run seed through
//! labeled SHA-256 derivations, so adding or removing one consumer never
//! shifts the draws of another and replays can re-derive any stream from
//! the logged configuration alone.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a 32-byte seed from a parent seed and a list of labels.
pub fn derive(parent: u64, labels: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    for l in labels {
        h.update([l.len() as u8]);
        h.update(l.as_bytes());
    }
    h.finalize().into()
}

/// Stable per-agent seed derived from the run seed.
pub fn agent_seed(run_seed: u64, agent_id: &str) -> u64 {
    let bytes = derive(run_seed, &["agent", agent_id]);
    u64::from_le_bytes(bytes[0..8].try_into().unwrap())
}

/// An independent ChaCha8 stream for one labeled purpose.
pub fn stream(parent: u64, labels: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive(parent, labels))
}

/// Stateless uniform draw in [0, 1) keyed by labels and a counter. Used
/// where a value must be recomputable from scratch (pulse targets, jitter at
/// a known version) without replaying a stream position.
pub fn unit_hash(parent: u64, labels: &[&str], counter: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    for l in labels {
        h.update([l.len() as u8]);
        h.update(l.as_bytes());
    }
    h.update(counter.to_le_bytes());
    let bytes: [u8; 32] = h.finalize().into();
    let x = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
    // 53 significant bits keep the value exactly representable.
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Stateless u64 derived the same way as [`unit_hash`].
pub fn u64_hash(parent: u64, labels: &[&str], counter: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    for l in labels {
        h.update([l.len() as u8]);
        h.update(l.as_bytes());
    }
    h.update(counter.to_le_bytes());
    let bytes: [u8; 32] = h.finalize().into();
    u64::from_le_bytes(bytes[0..8].try_into().unwrap())
}
