//! Counter-based randomness: every draw is addressed by `(seed, stream, index)`
//! so results do not depend on evaluation order or thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noise added to the fitting sample.
pub const STREAM_FIT_NOISE: u64 = 1;
/// Noise added at prediction time.
pub const STREAM_PREDICT_NOISE: u64 = 2;
/// Synthetic data generation.
pub const STREAM_SYNTH: u64 = 3;
/// Monte-Carlo evaluation draws.
pub const STREAM_MONTE_CARLO: u64 = 4;
/// Shuffling for the train/unlabeled/test split.
pub const STREAM_SPLIT: u64 = 5;

/// A sequential generator for one stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The `index`-th uniform draw on `[0, 1)` of a stream.
pub fn uniform_at(seed: u64, stream: u64, index: u64) -> f64 {
    let mut rng = stream_rng(seed, stream);
    rng.set_word_pos(2 * index as u128);
    rng.random::<f64>()
}

/// Derives an independent seed for sub-task `i` (e.g. one point of a sweep).
pub fn sub_seed(seed: u64, i: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - 1);
    rng.set_word_pos(2 * i as u128);
    rng.random::<u64>()
}
