//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic consumer (per-class shuffles, per-sample augmentation,
//! dropout masks, weight init) gets its own ChaCha stream whose seed is a
//! pure function of a base seed and a small tuple of stream coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains keep e.g. the augmentation stream of sample 3 apart from
/// the dropout stream of step 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    Augment = 2,
    Shuffle = 3,
    Dropout = 4,
    Init = 5,
    Synthetic = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with stream coordinates into a single 64-bit seed.
pub fn derive_seed(seed: u64, stream: Stream, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, coords))
}
