//! Deterministic seed derivation.
//!
//! Every stochastic component draws from a named substream of one global
//! seed, so individual pipeline stages can be rerun in isolation and still
//! reproduce byte-identical outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Derive a child seed for a named substream.
pub fn derive(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, mixed with the parent seed and finalized with
    // splitmix64 so nearby seeds map to unrelated streams.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

/// Derive a child seed for the `index`-th element of a named substream.
pub fn derive_indexed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive(seed, label).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// A reproducible RNG for a derived seed.
pub fn rng_from(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_are_stable_and_distinct() {
        assert_eq!(derive(7, "train"), derive(7, "train"));
        assert_ne!(derive(7, "train"), derive(7, "split"));
        assert_ne!(derive(7, "train"), derive(8, "train"));
        assert_ne!(derive_indexed(7, "fold", 0), derive_indexed(7, "fold", 1));
    }
}
