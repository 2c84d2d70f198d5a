//! Counter-based random streams, so that draws do not depend on thread
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const TAG_LATENT: u64 = 1;
pub(crate) const TAG_BETA: u64 = 2;
pub(crate) const TAG_COVARIANCE: u64 = 3;
pub(crate) const TAG_LOADINGS: u64 = 4;
pub(crate) const TAG_SITES: u64 = 5;
pub(crate) const TAG_NOISE: u64 = 6;
pub(crate) const TAG_PREDICT: u64 = 7;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for the tuple `(seed, tag, iteration, index)`.
pub fn stream(seed: u64, tag: u64, iteration: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut h = splitmix64(seed);
    for (w, v) in [tag, iteration, index, 0x5eed].into_iter().enumerate() {
        h = splitmix64(h ^ splitmix64(v.wrapping_add(w as u64)));
        key[w * 8..(w + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
