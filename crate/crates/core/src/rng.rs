//! Seed derivation.
//!
//! Every random stream is a ChaCha8 generator (counter based) keyed by a
//! 64-bit seed. Child seeds are derived from a master seed plus a label and
//! an index, so a restart or pipeline stage can be re-run in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type GscRng = ChaCha8Rng;

/// Deterministic child seed for `(master, label, index)`.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> GscRng {
    ChaCha8Rng::seed_from_u64(seed)
}
