//! Deterministic seed derivation.
//!
//! Every randomized stage of a run draws from a `ChaCha8Rng` seeded through
//! [`derive`], so one master seed pins datasets, model initializations,
//! noise draws, and partition shuffles without any shared RNG state between
//! stages. The mixer is splitmix64 over a stable FNV-1a hash of the tag, so
//! derived streams do not depend on hasher internals of the standard library.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a master seed, a stage tag, and an index.
pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    let mut z = splitmix64(master ^ fnv1a(tag.as_bytes()));
    z = splitmix64(z ^ index);
    splitmix64(z)
}

/// A ChaCha stream for one derived seed.
pub fn rng(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_stable() {
        // Frozen: a silent change here would silently re-randomize every run.
        assert_eq!(derive(42, "trial", 3), 5093741095693570433);
    }

    #[test]
    fn distinct_tags_and_indices_decorrelate() {
        assert_ne!(derive(7, "noise", 0), derive(7, "shuffle", 0));
        assert_ne!(derive(7, "noise", 0), derive(7, "noise", 1));
        assert_ne!(derive(7, "noise", 0), derive(8, "noise", 0));
    }

    #[test]
    fn rng_streams_are_reproducible() {
        use rand::RngCore;
        let mut a = rng(1, "x", 2);
        let mut b = rng(1, "x", 2);
        assert_eq!(a.next_u64(), b.next_u64());
    }
}
