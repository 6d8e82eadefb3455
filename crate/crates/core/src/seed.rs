//! Seed derivation so per-image work is reproducible in any execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG type used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Mix a global seed with a stream id (splitmix64 finalizer).
pub fn derive_seed(global: u64, stream: u64) -> u64 {
    let mut z = global ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for item `stream` under `global`.
pub fn stream_rng(global: u64, stream: u64) -> Rng {
    rng_from_seed(derive_seed(global, stream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_differ_and_repeat() {
        let a: u64 = stream_rng(7, 0).random();
        let b: u64 = stream_rng(7, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, stream_rng(7, 0).random::<u64>());
        assert_ne!(derive_seed(0, 0), derive_seed(1, 0));
    }
}
