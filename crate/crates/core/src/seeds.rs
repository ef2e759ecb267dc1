//! Deterministic seed derivation.
//!
//! Every random draw in the workspace descends from one base seed through
//! `derive`, which mixes in a domain tag and an index. Tags keep unrelated
//! stages (corpus split, synthesis, mock noise) statistically independent
//! even when they share a base seed, and the scheme is stable across
//! platforms and releases: identical inputs always produce identical
//! streams.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// splitmix64 finalizer. Bijective on u64, so distinct inputs never collide.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` for the stream named by `tag` at `index`.
pub fn derive(base: u64, tag: &str, index: u64) -> u64 {
    let mut z = mix64(base);
    for b in tag.bytes() {
        z = mix64(z ^ u64::from(b));
    }
    mix64(z ^ index)
}

/// ChaCha generator for the derived stream. ChaCha20 keeps the stream
/// identical across architectures, unlike the standard library hasher.
pub fn rng(base: u64, tag: &str, index: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive(base, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derive_is_deterministic() {
        assert_eq!(derive(7, "split", 0), derive(7, "split", 0));
        assert_eq!(rng(7, "split", 0).next_u64(), rng(7, "split", 0).next_u64());
    }

    #[test]
    fn tags_and_indices_separate_streams() {
        let a = derive(7, "split", 0);
        assert_ne!(a, derive(7, "synth", 0));
        assert_ne!(a, derive(7, "split", 1));
        assert_ne!(a, derive(8, "split", 0));
    }

    #[test]
    fn no_collisions_over_small_grid() {
        let mut seen = std::collections::HashSet::new();
        for base in 0..8u64 {
            for idx in 0..64u64 {
                for tag in ["a", "b", "mix"] {
                    assert!(seen.insert(derive(base, tag, idx)));
                }
            }
        }
    }
}
