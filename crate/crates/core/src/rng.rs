//! Seed derivation and random streams.
//!
//! Every random quantity in a run flows from one 64-bit master seed. Child
//! seeds are derived by hashing `(master, purpose, index)` through SplitMix64,
//! so replica `r` of purpose `"walk"` always sees the same stream regardless
//! of scheduling. Environment coordinates use the same mixer as a
//! counter-based generator: the uniform attached to coordinate `k` is a pure
//! function of `(seed, purpose, k)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn purpose_hash(purpose: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Child seed for `(master, purpose, index)`.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    let a = splitmix64(master ^ purpose_hash(purpose));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Independent ChaCha stream for `(master, purpose, index)`.
pub fn stream(master: u64, purpose: &str, index: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, index))
}

/// Uniform on the open interval (0, 1) attached to a signed coordinate.
pub fn coordinate_uniform(seed: u64, purpose: &str, coordinate: i64) -> f64 {
    let bits = derive_seed(seed, purpose, coordinate as u64) >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}
