//! Splittable deterministic RNG streams.
//!
//! Every randomized stage (bootstrap replicate, Monte-Carlo repetition, fold
//! shuffle, design draw) derives its own generator from `(seed, index)` via a
//! SplitMix64 mix, so results do not depend on thread count or scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Labels for the independent substreams of a simulation run.
pub mod stream {
    pub const DESIGN: u64 = 1;
    pub const COEFFS: u64 = 2;
    pub const ALPHAS: u64 = 3;
    pub const SUBSAMPLE: u64 = 4;
    /// Noise stream for Monte-Carlo repetition `r` is `NOISE_BASE + r`.
    pub const NOISE_BASE: u64 = 1 << 20;
    /// Cross-validation fold stream for repetition `r` is `CV_BASE + r`.
    pub const CV_BASE: u64 = 2 << 20;
    /// Bootstrap master seed for repetition `r`, method slot `m` is
    /// `BOOT_BASE + r * 16 + m`.
    pub const BOOT_BASE: u64 = 3 << 20;
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the 64-bit seed of substream `index` of `seed`.
pub fn derive_stream(seed: u64, index: u64) -> u64 {
    mix(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Builds the generator for substream `index` of `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_stream(seed, index))
}

/// One standard-normal draw.
pub fn std_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}
