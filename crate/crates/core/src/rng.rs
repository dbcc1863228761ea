//! Stable seed derivation. Every random stream in the crate is keyed by a
//! tuple of byte strings hashed with SHA-256, so draws never depend on call
//! order, thread scheduling or platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(seed: u64, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Independent generator for `(seed, parts...)`.
pub fn stream(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(seed, parts))
}

/// Child seed for `(seed, parts...)`.
pub fn derive(seed: u64, parts: &[&[u8]]) -> u64 {
    let d = digest(seed, parts);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
