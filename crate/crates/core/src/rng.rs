//! Seed splitting.
//!
//! Every random stream in a run derives from a single run seed. A stream is
//! `ChaCha8Rng::seed_from_u64(seed)` with its ChaCha stream id set to one of
//! the constants below, so streams never overlap and adding a consumer never
//! perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Environment used during training episodes.
pub const STREAM_ENV_TRAIN: u64 = 0;
/// Environment used during greedy evaluation episodes.
pub const STREAM_ENV_EVAL: u64 = 1;
/// Agent exploration draws.
pub const STREAM_EXPLORE: u64 = 2;
/// Network weight initialization.
pub const STREAM_INIT: u64 = 3;
/// Replay mini-batch sampling.
pub const STREAM_REPLAY: u64 = 4;

pub fn stream(seed: u64, stream_id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}
