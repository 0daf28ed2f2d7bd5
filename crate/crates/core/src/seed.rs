//! Seed derivation.
//!
//! Every generated item gets its own RNG stream. The seed of item `index` in
//! stream `stream` under root seed `root` is
//! `splitmix64(splitmix64(root ^ splitmix64(stream)) ^ index)`, so items can be
//! produced in any order or in parallel with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable 64-bit tag for a stream name (FNV-1a).
pub fn stream_tag(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn derive_seed(root: u64, stream: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ splitmix64(stream_tag(stream))) ^ index)
}

pub fn rng_for(root: u64, stream: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, stream, index))
}
