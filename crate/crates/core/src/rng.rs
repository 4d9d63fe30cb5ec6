//! Deterministic random-number streams.
//!
//! All stochastic operations in the crate take an explicit seeded generator;
//! there is no global randomness. Independent substreams (one per sample,
//! one per record, ...) are derived from a base seed and a stream index so
//! that results do not depend on iteration order or thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A ChaCha stream derived deterministically from `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Counter-based source of per-sample substreams.
///
/// The counter only ever increases, so every sample drawn during a training
/// run gets a unique stream; `(seed, counter)` is all that checkpoints need
/// to persist to resume the noise sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseSequencer {
    pub seed: u64,
    pub counter: u64,
}

impl NoiseSequencer {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn with_counter(seed: u64, counter: u64) -> Self {
        Self { seed, counter }
    }

    /// The next per-sample generator.
    pub fn next_stream(&mut self) -> ChaCha8Rng {
        let rng = substream(self.seed, self.counter);
        self.counter += 1;
        rng
    }
}
