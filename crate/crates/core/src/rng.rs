//! Deterministic random streams.
//!
//! Every sampling task owns a stream derived from `(master seed, purpose tag,
//! index)`, so results do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// Derive a child stream from a master seed, a purpose tag and an index path.
pub fn derive_stream(master: u64, tag: &str, path: &[u64]) -> Stream {
    Stream::from_seed(derive_seed(master, tag, path))
}

/// The 32-byte seed behind [`derive_stream`].
pub fn derive_seed(master: u64, tag: &str, path: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    for p in path {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    seed
}

/// Derive a `u64` seed (used where a plain integer seed is stored, e.g. feature maps).
pub fn derive_u64(master: u64, tag: &str, path: &[u64]) -> u64 {
    let seed = derive_seed(master, tag, path);
    u64::from_le_bytes(seed[..8].try_into().expect("8 bytes"))
}
