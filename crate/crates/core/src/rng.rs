//! Seeded random streams.
//!
//! All randomness in the crate goes through ChaCha8 seeded with `seed_from_u64`,
//! which is portable and fully specified, so datasets and runs replay bit-exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for a (seed, purpose) pair.
pub fn stream(seed: u64, purpose: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}
