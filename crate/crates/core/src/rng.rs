//! Deterministic seedable randomness (splitmix64).
//!
//! Every random consumer in the pipeline owns its own [`Prng`] derived from
//! the run seed by xoring a consumer tag (and, for per-worker streams, a
//! worker index mixed through a golden-ratio multiple). Identical seeds give
//! identical streams on every platform; there is no global state.

use serde::{Deserialize, Serialize};

/// Consumer tags for sub-seeding. Streams are derived as
/// `seed ^ TAG` (plus `GOLDEN * (i + 1)` for indexed workers).
pub mod tags {
    pub const INIT: u64 = 0x9d3f_3a71_0c55_21e7;
    pub const ROLLOUT_ENV: u64 = 0x517c_c1b7_2722_0a95;
    pub const MINIBATCH: u64 = 0x2545_f491_4f6c_dd1d;
    pub const EVAL: u64 = 0xda94_2042_e4dd_58b5;
    pub const POWER_ITER: u64 = 0x8f1b_bcdc_bfa5_3e0b;
    pub const VERIFY: u64 = 0x3c6e_f372_fe94_f82b;
    pub const MOTION: u64 = 0x61c8_8646_80b5_83eb;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// splitmix64 counter stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng { state: seed }
    }

    /// Stream for a named consumer.
    pub fn derived(seed: u64, tag: u64) -> Self {
        Prng::new(seed ^ tag)
    }

    /// Stream for the `i`-th worker of a named consumer.
    pub fn derived_indexed(seed: u64, tag: u64, i: u64) -> Self {
        Prng::new(seed ^ tag ^ GOLDEN.wrapping_mul(i.wrapping_add(1)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller (cosine branch only, so the stream
    /// consumes exactly two words per draw).
    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Sample an index from a normalized distribution `p` (sums to 1).
    pub fn sample_index(&mut self, p: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    }

    /// Raw state, for checkpointing.
    pub fn state(&self) -> u64 {
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = Prng::new(12345);
        let mut b = Prng::new(12345);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = Prng::derived(7, tags::INIT);
        let mut b = Prng::derived(7, tags::EVAL);
        let same = (0..100).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Prng::new(9);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut r = Prng::new(3);
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = r.normal();
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }
}
