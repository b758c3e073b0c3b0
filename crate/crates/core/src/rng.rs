//! Named random sub-streams derived from a single seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Well-known stream names.
pub mod streams {
    pub const DATA: &str = "data";
    pub const TIMES: &str = "times";
    pub const NOISE: &str = "noise";
    pub const THINNING: &str = "thinning";
    pub const INIT: &str = "init";
    pub const BATCH: &str = "batch";
    pub const DROPOUT: &str = "dropout";
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Independent stream `name` of the generator seeded by `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    rng
}

/// Stream `name` for the `index`-th of several independent runs.
pub fn run_stream(seed: u64, name: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(fnv1a(name) ^ index);
    rng
}
