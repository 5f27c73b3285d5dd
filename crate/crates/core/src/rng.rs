//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator so results are
//! reproducible across platforms.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of a seed; used to separate bootstrap, init, prior and
/// minibatch randomness of one training run.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes `(seed, index)` into a well-spread child seed (splitmix64 finalizer).
pub fn derive(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_differ() {
        let a = stream(7, 1).next_u64();
        let b = stream(7, 2).next_u64();
        assert_ne!(a, b);
        assert_eq!(a, stream(7, 1).next_u64());
    }

    #[test]
    fn derive_spreads_neighbouring_indices() {
        assert_ne!(derive(0, 0), derive(0, 1));
        assert_ne!(derive(0, 1), derive(1, 0));
        assert_eq!(derive(3, 9), derive(3, 9));
    }
}
