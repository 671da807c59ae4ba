//! The generator contract shared by every augmenter.
//!
//! All randomness flows through [`AugRng`], a ChaCha8 stream seeded from a
//! `u64`. Only three derived draws are used, each consuming exactly one
//! 64-bit word:
//!
//! * [`AugRng::uniform`]: `(word >> 11) * 2^-53`, a float in `[0, 1)`
//! * [`AugRng::uniform_in`]: `lo + (hi - lo) * uniform()`
//! * [`AugRng::index`]: `min(floor(uniform() * n), n - 1)`
//!
//! Keeping the draw count independent of the value drawn lets other
//! implementations replay a stream given the same ChaCha8 words.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct AugRng {
    inner: ChaCha8Rng,
}

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

impl AugRng {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform float in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform float in `[lo, hi)`; returns `lo` exactly when `lo == hi`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`. Still consumes one draw when `n <= 1`.
    pub fn index(&mut self, n: usize) -> usize {
        let u = self.uniform();
        if n == 0 {
            return 0;
        }
        ((u * n as f64) as usize).min(n - 1)
    }

    /// Bernoulli trial `u < p`. Raising `p` never turns a success into a failure.
    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}
