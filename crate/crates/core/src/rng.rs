//! Named random sub-streams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent consumers of randomness. Each gets its own ChaCha stream so
/// that, e.g., changing the dropout draw count never perturbs edge shuffling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    PretrainShuffle = 2,
    Dropout = 3,
    PairShuffle = 4,
    SpectralStart = 5,
    Synth = 6,
    Corruption = 7,
    Sampling = 8,
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
