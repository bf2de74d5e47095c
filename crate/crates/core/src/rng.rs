//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha stream, selected by a
//! (seed, stream) pair, so runs are reproducible regardless of evaluation
//! order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type SimRng = ChaCha12Rng;

/// Stream identifiers for the independent noise sources of one link run.
pub mod stream {
    pub const BITS: u64 = 1;
    pub const PREAMBLE: u64 = 2;
    pub const LASER: u64 = 3;
    pub const DRIVE_AWGN: u64 = 4;
    pub const PHOTODIODE: u64 = 16;
    pub const COHERENT_NOISE: u64 = 32;
}

/// Returns the RNG for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer, used to derive per-point seeds from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
