//! Seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is a
//! hash of a root seed and a short tuple of identifiers (stage tag, step,
//! sample index, ...). Streams are therefore independent of evaluation order
//! and of the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stage tags keep streams of different pipeline stages disjoint.
pub mod tag {
    pub const DATASET: u64 = 0x6461_7461;
    pub const SPLIT: u64 = 0x7370_6c74;
    pub const TRAIN: u64 = 0x7472_6e00;
    pub const INIT: u64 = 0x696e_6974;
    pub const CALIBRATION: u64 = 0x6361_6c00;
    pub const TEST: u64 = 0x7465_7374;
    pub const GRID: u64 = 0x6772_6964;
    pub const PROBE: u64 = 0x7072_6f62;
    pub const PAC: u64 = 0x7061_6300;
    pub const SENSITIVITY: u64 = 0x7365_6e73;
    pub const PERTURB: u64 = 0x7065_7274;
    pub const COVERAGE: u64 = 0x636f_7600;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a root seed and a tuple of identifiers.
pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(root: u64, parts: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_seeds_depend_on_every_part_and_order() {
        let a = derive_seed(7, &[1, 2, 3]);
        assert_eq!(a, derive_seed(7, &[1, 2, 3]));
        assert_ne!(a, derive_seed(8, &[1, 2, 3]));
        assert_ne!(a, derive_seed(7, &[1, 2, 4]));
        assert_ne!(a, derive_seed(7, &[2, 1, 3]));
        assert_ne!(a, derive_seed(7, &[1, 2]));
    }

    #[test]
    fn streams_are_reproducible() {
        let x: Vec<u64> = stream(1, &[tag::GRID, 5]).random_iter().take(4).collect();
        let y: Vec<u64> = stream(1, &[tag::GRID, 5]).random_iter().take(4).collect();
        assert_eq!(x, y);
    }
}
