//! Seeded random streams.
//!
//! Every stochastic stage draws from a ChaCha stream whose seed is derived
//! from a master seed and a list of indices (epoch, sequence, object, ...),
//! so results do not depend on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a master seed with a path of stream indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x5151))))
}

pub fn stream(master: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(master, path))
}

/// Stream labels, kept distinct so that different stages never share draws.
pub mod label {
    pub const SYNTH_TRAIN: u64 = 1;
    pub const SYNTH_VAL: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const TRAIN_NOISE: u64 = 4;
    pub const VAL_NOISE: u64 = 5;
    pub const INIT: u64 = 6;
    pub const TRACK: u64 = 7;
    pub const CASCADE: u64 = 8;
    pub const BENCH: u64 = 9;
    pub const SCENE_SELECT: u64 = 10;
    pub const BENCH_TRACK: u64 = 11;
}
