//! Deterministic random-number helpers.
//!
//! Everything stochastic in the pipeline derives from explicit seeds, so
//! results are bit-exact across runs and platforms. ChaCha8 is used as the
//! generator and Gaussian draws are produced by Box-Muller on top of raw
//! 64-bit words, which keeps the byte stream independent of any distribution
//! crate internals.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a string context (e.g. a sample id) into a new
/// 64-bit seed. FNV-1a over the context, folded into the seed.
pub fn mix_seed(base: u64, context: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ base.rotate_left(17);
    for b in context.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Mixes a base seed with an integer lane (e.g. a draw index).
pub fn mix_seed_u64(base: u64, lane: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ lane.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// A deterministic stream of uniforms and Gaussians.
pub struct DetRng {
    inner: ChaCha8Rng,
    spare_gauss: Option<f64>,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_gauss: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1). 53-bit mantissa resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller.
    pub fn gauss(&mut self) -> f64 {
        if let Some(z) = self.spare_gauss.take() {
            return z;
        }
        // u1 in (0,1] to keep ln finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_gauss = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Unbiased integer in [0, n) by rejection sampling.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
