//! Seed derivation. Each consumer of randomness gets its own stream, derived
//! from the master seed by a fixed offset, so adding a stream never shifts
//! the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    PairSampler = 1,
    ItemSampler = 2,
    Shuffle = 3,
    Validation = 4,
    Init = 5,
    Feedback = 6,
    Corpus = 7,
    Ranking = 8,
    RandomScores = 9,
    EvalSeeds = 10,
}

const OFFSET_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn stream_seed(master: u64, stream: Stream) -> u64 {
    master.wrapping_add((stream as u64).wrapping_mul(OFFSET_STRIDE))
}

pub fn rng(master: u64, stream: Stream) -> Rng {
    Rng::seed_from_u64(stream_seed(master, stream))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
