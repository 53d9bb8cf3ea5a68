//! Named, independent random streams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Channel,
    Candidates,
    Dropout,
    Training,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Channel => 1,
            Stream::Candidates => 2,
            Stream::Dropout => 3,
            Stream::Training => 4,
        }
    }
}

/// Generator for `stream` under `seed`; different streams never overlap.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
