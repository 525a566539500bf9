//! Per-purpose seeds derived from one top-level seed.
//!
//! Each purpose XORs the run seed with a fixed tag, so changing how one stage
//! consumes randomness never shifts another stage's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const NET_INIT: u64 = 0x4E45_5449_4E49_5400;
pub const SHAPES_TRAIN: u64 = 0x5348_4150_5452_4E00;
pub const SHAPES_HELDOUT: u64 = 0x5348_4150_484C_4400;
pub const TRAIN_SPLIT: u64 = 0x5452_4E53_504C_5400;
pub const TRAIN_SHUFFLE: u64 = 0x5452_4E53_4846_4C00;
pub const PARAM_INIT: u64 = 0x5041_5241_4D49_4E00;
pub const JITTER: u64 = 0x4A49_5454_4552_0000;
pub const PAINT: u64 = 0x5041_494E_5400_0000;
pub const BASELINE: u64 = 0x4241_5345_4C4E_0000;
pub const STYLE_SOURCE: u64 = 0x5354_594C_4500_0000;

pub fn derive(seed: u64, tag: u64) -> u64 {
    seed ^ tag
}

pub fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}

/// An independent stream for item `index` of a purpose.
pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut r = rng(seed, tag);
    r.set_stream(index);
    r
}
