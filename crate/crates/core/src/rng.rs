//! Seeded random number streams.
//!
//! Every stage derives its own ChaCha stream from the run seed and a tag, so
//! adding draws to one stage never perturbs another. All sampling used in
//! training goes through these helpers to keep runs bit-reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A deterministic RNG for `(seed, tag)`. Distinct tags give independent
/// streams of the same seed.
pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(tag));
    rng
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Uniform in the open interval (0, 1).
pub fn uniform_open(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1 = uniform_open(rng);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Standard Gumbel noise, `-ln(-ln u)`.
pub fn gumbel(rng: &mut impl Rng) -> f64 {
    -(-uniform_open(rng).ln()).ln()
}

/// Sample an index from unnormalized non-negative weights.
pub fn multinomial(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0, "multinomial with zero total weight");
    let mut target = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        target -= w;
        if target <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}
