//! The single pseudo-random generator used by every stochastic operation.
//!
//! Algorithm: ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`), a
//! counter-based stream cipher generator. A 64-bit seed is expanded to the
//! 256-bit key with `SeedableRng::seed_from_u64` (PCG32 expansion). Output is
//! identical on every platform.
//!
//! Derived quantities are pinned here rather than left to library defaults:
//! uniform reals take the top 53 bits of one `u64`, integer ranges use
//! rejection sampling on whole `u64` draws.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a sub-task, e.g. one image of a synthetic bundle.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        // largest multiple of n that fits, to avoid modulo bias
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle driven by [`SeededRng::below`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
