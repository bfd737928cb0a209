//! Counter-based pseudorandom generator.
//!
//! Every draw is `splitmix64_mix(seed + counter * GAMMA)` for an incrementing
//! counter, so a stream is a pure function of `(seed, counter)`: no hidden
//! state, identical output on every platform, and cheap deterministic forking
//! for per-clip or per-step substreams.

use std::f64::consts::PI;

use super::array::DenseArray;

/// Weyl increment from SplitMix64 (the golden-ratio constant).
const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer: bijective avalanche mix of a 64-bit word.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    counter: u64,
    /// Box-Muller produces normals in pairs; the second of a pair is held
    /// here and returned by the next `next_normal` call.
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            counter: 0,
            spare_normal: None,
        }
    }

    /// A statistically independent stream addressed by `tag`. Forking depends
    /// only on the parent seed, so `fork` commutes with any number of draws.
    pub fn fork(&self, tag: u64) -> Rng {
        Rng::new(mix(self.seed ^ mix(tag)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in [0, 1): the top 53 bits of one 64-bit draw.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n) by scaling one 53-bit draw; `n` must fit in
    /// 53 bits, which covers every index used in this crate.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0 && n < (1 << 53), "next_below: n out of range: {n}");
        let v = (self.next_f64() * n as f64) as u64;
        v.min(n - 1)
    }

    /// Standard normal via Box-Muller. Each pair of uniform draws (u1, u2)
    /// yields the pair (r cos θ, r sin θ) with r = sqrt(-2 ln u1) and
    /// θ = 2π u2; the cosine branch is returned first, the sine branch on the
    /// following call. u1 is shifted into (0, 1] so the log never sees zero.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_array(&mut self, shape: &[usize]) -> DenseArray {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| self.next_normal()).collect();
        DenseArray::new(shape.to_vec(), data).expect("shape/data constructed consistently")
    }

    pub fn uniform_array(&mut self, shape: &[usize], lo: f64, hi: f64) -> DenseArray {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| lo + (hi - lo) * self.next_f64()).collect();
        DenseArray::new(shape.to_vec(), data).expect("shape/data constructed consistently")
    }
}

/// Exposed for components that need a one-off stable 64-bit mix (text token
/// hashing, stream derivation) without holding an `Rng`.
pub fn mix64(z: u64) -> u64 {
    mix(z)
}
