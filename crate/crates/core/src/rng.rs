//! Seeded random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the run
//! seed, so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_ORDER: u64 = 2;
pub const STREAM_SAMPLE: u64 = 3;
pub const STREAM_SPLIT: u64 = 4;
pub const STREAM_DATA: u64 = 5;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
