use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator for a named sub-stream of a run.
///
/// Every consumer of randomness (init, shuffling, splits, strategies) gets
/// its own stream so that adding draws in one place never shifts another.
pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer, used to derive child seeds.
pub(crate) fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const PAIRS: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const QUERY: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
    pub const SYNTH: u64 = 7;
}
