//! Seeding. Every path gets its own ChaCha stream under the master seed, so
//! results do not depend on how paths are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

pub fn path_rng(seed: u64, path_id: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

pub fn master_rng(seed: u64) -> PathRng {
    ChaCha8Rng::seed_from_u64(seed)
}
