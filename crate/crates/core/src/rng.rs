//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! run seed, so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeedStream = ChaCha8Rng;

/// Named sub-streams of a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Batch = 2,
    Augment = 3,
    Data = 4,
    Split = 5,
    Labeled = 6,
}

pub fn stream(seed: u64, which: Stream) -> SeedStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
