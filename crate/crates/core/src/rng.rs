//! Seed derivation so that every random stream is a pure function of a
//! base seed and a stable key, independent of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a key into a new, well-separated seed.
pub fn derive_seed(base: u64, key: u64) -> u64 {
    splitmix64(splitmix64(base) ^ key.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Seed for a named sub-stream, e.g. `named_seed(seed, "terrain", 7)`.
pub fn named_seed(base: u64, tag: &str, index: u64) -> u64 {
    let tag_hash = tag
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    derive_seed(derive_seed(base, tag_hash), index)
}

/// A generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
