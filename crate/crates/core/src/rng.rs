//! Seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream that is a pure
//! function of a root seed and an index path, so results never depend on
//! evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ tag.rotate_left(17) ^ 0x5DEE_CE66_D1CE_5EED)
}

/// Random stream number `index` of the generator rooted at `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws an index from a probability vector given a uniform sample in [0, 1).
///
/// Entries with zero probability are never returned.
pub fn categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}
