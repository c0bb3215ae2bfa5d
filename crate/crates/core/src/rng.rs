//! Counter-based random substreams.
//!
//! Every random draw in the crate comes from a stream keyed by a root seed
//! and a short tuple of counters (episode, player, purpose tag). Streams
//! are independent of scheduling, so parallel rollouts stay reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags mixed into substream keys.
pub mod tag {
    pub const ROLLOUT: u64 = 0x726f_6c6c;
    pub const GENERATOR: u64 = 0x6765_6e72;
    pub const ORACLE: u64 = 0x6f72_636c;
    pub const HARD_INSTANCE: u64 = 0x6861_7264;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the 64-bit key of the substream `(seed, path...)`.
pub fn stream_key(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, path))
}
