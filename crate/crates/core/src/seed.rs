//! Seed derivation helpers.
//!
//! Every random decision in the pipeline is made from a seed derived from the
//! master seed and a stable identifier (conversation index, attempt number,
//! stage tag), never from a shared generator. That keeps output independent of
//! worker scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The generator used everywhere a seeded random source is needed.
pub type SeededRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a parent seed with a child key into a new 64-bit seed.
pub fn hash64(seed: u64, key: u64) -> u64 {
    splitmix64(seed ^ splitmix64(key))
}

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// First eight bytes of SHA-256, big-endian. Stable across platforms and
/// releases, unlike `std::hash`.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}

pub fn stable_hash_str(s: &str) -> u64 {
    stable_hash(s.as_bytes())
}
