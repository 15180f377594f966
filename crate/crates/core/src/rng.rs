//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a master seed plus a tuple of stream coordinates, so results never
//! depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with each coordinate in turn.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix(seed), |acc, &c| splitmix(acc ^ splitmix(c)))
}

/// Generator for the stream identified by `(seed, coords...)`.
pub fn stream(seed: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, coords))
}

/// Stream domain tags, kept distinct so unrelated consumers never share a stream.
pub(crate) mod tag {
    pub const INIT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const SAMPLE: u64 = 5;
    pub const LOCAL: u64 = 6;
    pub const FCUBE: u64 = 7;
    pub const BLOBS: u64 = 8;
    pub const CENTERS: u64 = 9;
}
