//! Seeded random streams.
//!
//! Every consumer of randomness asks for a `(seed, stream)` pair. Streams are
//! ChaCha8 stream ids, so two substreams of one seed never overlap and the
//! draws of a sweep cell do not depend on which worker ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Process noise `w_t` of a closed-loop run.
pub const STREAM_PROCESS_NOISE: u64 = 1;
/// Rademacher dither of the warm-up phase.
pub const STREAM_DITHER: u64 = 2;
/// Frozen common-random-numbers tensor of the gain search.
pub const STREAM_GAIN_SEARCH: u64 = 3;
/// Fresh rollouts of the baseline cost estimate.
pub const STREAM_BASELINE: u64 = 4;

/// Independent generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a per-cell seed from a master seed and cell coordinates (splitmix64
/// finalizer over the mixed words).
pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    let mut h = master ^ 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        h = splitmix(h ^ w.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
