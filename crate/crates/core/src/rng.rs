//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] whose seed is
//! derived from a root seed, a stream name and an index. Two callers that
//! use different stream names never see correlated draws, and adding draws
//! to one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Positional-encoding node IDs.
pub const PE: &str = "pe";
/// Point clouds, node subsets, splits.
pub const SAMPLING: &str = "sampling";
/// Parameter initialization.
pub const INIT: &str = "init";
/// Terrain source/target pairs.
pub const PAIRS: &str = "pairs";
/// Dropout masks during training.
pub const DROPOUT: &str = "dropout";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed from `(root, stream, index)`.
pub fn derive_seed(root: u64, stream: &str, index: u64) -> u64 {
    let a = splitmix64(root ^ fnv1a(stream.as_bytes()));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x6A09_E667_F3BC_C909)))
}

pub fn stream(root: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, name, index))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
