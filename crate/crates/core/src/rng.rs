//! Seed derivation and the fixed uniform-to-normal transform used by the
//! simulation designs.
//!
//! Every random stream is a ChaCha8 generator seeded with
//! `seed_from_u64(key)`, where `key` is derived from a tuple of integers by
//! chained SplitMix64 finalisation. Uniforms on `[0, 1)` take the top 53 bits
//! of a 64-bit draw; normals use the Box-Muller cosine branch with
//! `u1` mapped to `(0, 1]`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Order-sensitive key for a tuple of integers.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |h, &p| splitmix64(h ^ splitmix64(p)))
}

pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Uniform on `[0, 1)`.
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal: `sqrt(-2 ln(1 - u1)) cos(2 pi u2)`.
pub fn normal(rng: &mut impl RngCore) -> f64 {
    let u1 = uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
