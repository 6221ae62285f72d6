//! Seeded random streams.
//!
//! Every random quantity in the crate comes from ChaCha8 (`rand_chacha`)
//! seeded with `ChaCha8Rng::seed_from_u64(seed)` and then moved to a numbered
//! stream with `set_stream`. Stream numbers are derived from the role of the
//! quantity (which embedding row, which simulated hour, ...) so that a value
//! depends only on `(seed, role)` and never on how many other values were
//! drawn before it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform double in `[0, 1)` from the top 53 bits of one `u64`.
pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform double in `[-scale, scale)`.
pub fn symmetric(rng: &mut impl RngCore, scale: f64) -> f64 {
    scale * (2.0 * unit(rng) - 1.0)
}

/// Mixes two words into one seed (splitmix64 finalizer).
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
