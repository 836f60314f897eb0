//! Deterministic seed derivation for request-scoped random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a base seed and a sequence of words into one 64-bit seed.
pub(crate) fn derive(base: u64, words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h = splitmix(base);
    for w in words {
        h = splitmix(h ^ w);
    }
    h
}

pub(crate) fn rng(base: u64, words: impl IntoIterator<Item = u64>) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, words))
}
