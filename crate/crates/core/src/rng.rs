//! Seed expansion.
//!
//! Every random draw in a run derives from one user seed. A purpose and an
//! index select an independent ChaCha8 stream:
//! `ChaCha8Rng::seed_from_u64(seed)` with stream id `(purpose << 48) | index`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Split = 1,
    Synth = 2,
    Init = 3,
    Sampling = 4,
    Dropout = 5,
    Misc = 6,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | index);
    rng
}

/// Derives a child seed (for example a per-scale model seed) from the run seed.
pub fn derive_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, purpose, index).next_u64()
}
