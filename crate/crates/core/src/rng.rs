//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed on a seed
//! derived from the single user seed plus a domain tag and counters. A stream
//! never depends on how many other streams were consumed before it, so
//! results do not depend on generation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep the derived streams for different purposes apart.
pub mod tag {
    pub const PATH_NOISE: u64 = 0x5041_5448;
    pub const OBSERVATIONS: u64 = 0x4f42_5356;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const INIT: u64 = 0x494e_4954;
    pub const EPOCH: u64 = 0x4550_4f43;
    pub const DROPOUT: u64 = 0x4452_4f50;
    pub const STUDY: u64 = 0x5354_5544;
    pub const REPEAT: u64 = 0x5245_5045;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of words into a new 64-bit seed.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(splitmix64(seed), |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Counter-based stream: the key is `seed`, the ChaCha stream id is `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn rng_for(seed: u64, words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, words))
}
