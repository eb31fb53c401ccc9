//! Seeded random streams.
//!
//! Every randomized step derives its generator from one 64-bit seed plus a
//! fixed stream id, so changing how much randomness one step consumes never
//! shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream families. Epoch-dependent families are offset by the epoch index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Lexicon,
    Split,
    Noise,
    Shuffle(u64),
    Negatives(u64),
    Violation,
    GradCheck,
}

impl Stream {
    fn id(self) -> u64 {
        const EPOCH_BASE: u64 = 1 << 32;
        match self {
            Stream::Init => 1,
            Stream::Lexicon => 2,
            Stream::Split => 3,
            Stream::Noise => 4,
            Stream::Violation => 5,
            Stream::GradCheck => 6,
            Stream::Shuffle(epoch) => EPOCH_BASE + epoch,
            Stream::Negatives(epoch) => 2 * EPOCH_BASE + epoch,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
