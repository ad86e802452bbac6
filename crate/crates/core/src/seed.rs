//! Stable hashing and seed derivation. Everything here must produce the same
//! bits on every platform and toolchain, so std's `DefaultHasher` is out.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// First 8 bytes (little-endian) of the SHA-256 digest of `bytes`.
pub fn stable_hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a global seed with a 64-bit hash into a derived seed.
pub fn mix(seed: u64, hash: u64) -> u64 {
    splitmix64(seed ^ splitmix64(hash))
}

/// Per-trace seed: reward noise stays reproducible for a given trajectory id
/// across restarts and batch orderings.
pub fn trace_seed(global_seed: u64, trace_id: &str) -> u64 {
    mix(global_seed, stable_hash64(trace_id.as_bytes()))
}

/// Counter-based deterministic generator used by all seeded routines.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
