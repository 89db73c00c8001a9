//! Seeded random sources. ChaCha8 is used everywhere so that a seed gives the
//! same stream on every platform and build.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for `seed`, on an independent `stream` so different consumers
/// of the same seed do not share draws.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed (splitmix64 finalizer over `seed` and `index`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
