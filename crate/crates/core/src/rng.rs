//! The single pseudo-random stream used across the crate.
//!
//! Algorithm, so other implementations can reproduce every draw:
//!
//! * generator: xoshiro256** whose 256-bit state is filled by four successive
//!   SplitMix64 outputs starting from the 64-bit seed
//!   (`rand_xoshiro::Xoshiro256StarStar::seed_from_u64`);
//! * [`Rng::uniform`]: `(next_u64 >> 11) · 2⁻⁵³`, in `[0, 1)`;
//! * [`Rng::below`]: `(next_u64 as u128 · n) >> 64`, redrawing while the low
//!   64 bits fall under `2⁶⁴ mod n` (Lemire's unbiased method);
//! * [`Rng::normal`]: Box–Muller with `u1 = 1 − uniform()`, `u2 = uniform()`,
//!   returning `√(−2 ln u1)·cos(2π u2)` and caching the matching `sin` value
//!   for the next call;
//! * [`derive_seed`]: folds sub-stream indices into a seed with the
//!   SplitMix64 finaliser, `s ← mix(s ⊕ mix(i + 0x9E3779B97F4A7C15))`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for an independent sub-stream, e.g. `(seed, epoch, item)`.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed, |s, &p| {
        mix(s ^ mix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)))
    })
}

#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256StarStar,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn derived(seed: u64, parts: &[u64]) -> Self {
        Self::new(derive_seed(seed, parts))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher–Yates from the back: for `i = len−1 … 1`, swap `i` with `below(i+1)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
