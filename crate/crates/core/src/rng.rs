//! Seed derivation. Every random stream is a ChaCha8 generator keyed by a master seed and a
//! short path of integers, so runs never share state and results depend only on the seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags for derived streams.
pub mod stream {
    pub const MODEL_INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const DATA: u64 = 4;
    pub const POISON: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const WARMUP: u64 = 7;
    pub const EVAL: u64 = 8;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn derive_rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
