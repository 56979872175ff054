//! Deterministic random streams.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`). A run has a
//! single master seed; each consumer gets its own ChaCha stream id under that
//! seed, so draws in one stream never shift another. ChaCha8 output for a
//! given (seed, stream) is fixed by the algorithm and does not depend on the
//! crate version.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type GicRng = ChaCha8Rng;

/// Independent consumers of randomness within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    ParamInit = 1,
    Corruption = 2,
    ClusterInit = 3,
    Split = 4,
    Classifier = 5,
    KMeans = 6,
}

/// Generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> GicRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Generator for one repeat of a repeated protocol (split draw, classifier
/// init, ...). Repeats are distinguished by the high bits of the stream id.
pub fn repeat_stream(seed: u64, stream: Stream, repeat: usize) -> GicRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((repeat as u64 + 1) << 8) | stream as u64);
    rng
}
