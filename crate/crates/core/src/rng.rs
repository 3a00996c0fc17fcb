//! Counter-based random streams: stream `k` of a run depends only on the
//! master seed and `k`, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream for work item `index` under `master_seed`.
pub fn stream(master_seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Stream family used for auxiliary draws (future resampling, KS samples)
/// that must not collide with trajectory streams of the same seed.
pub fn aux_stream(master_seed: u64, purpose: u64, index: u64) -> StreamRng {
    stream(master_seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15), index)
}
