//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha20 (a counter-based
//! generator). A run seed selects the key; independent consumers (one per
//! message-passing hop, per audit trial, per query) select the 64-bit
//! stream id, so draws never depend on the order in which consumers run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha20Rng;

/// Generator for stream `stream` under key `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser, used to derive child seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for consumer `index` of kind `tag` under `seed`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(tag)) ^ index)
}

/// Standard normal draw (rand_distr's ziggurat sampler).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

// Stream tags; stream ids below 2^32 are reserved for message-passing hops.
pub(crate) const TAG_SPLIT: u64 = 1;
pub(crate) const TAG_HEAD_INIT: u64 = 2;
pub(crate) const TAG_DPSGD: u64 = 3;
pub(crate) const TAG_PROBE: u64 = 4;
pub(crate) const TAG_TRIAL: u64 = 5;
pub(crate) const TAG_QUERY: u64 = 6;
pub(crate) const TAG_ENCODER: u64 = 7;
pub(crate) const TAG_DATASET: u64 = 8;
