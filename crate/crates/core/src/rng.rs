//! Counter-based random streams.
//!
//! Every stream is ChaCha8 keyed by the user seed (expanded with
//! `SeedableRng::seed_from_u64`, which is portable) and addressed by a
//! 64-bit stream id `domain << 48 | index`. A stream is therefore a pure
//! function of `(seed, domain, index)`: permutation `b` of a test, or the
//! data of trial `t`, can be regenerated in isolation and in any order.
//!
//! Uniforms are `(k + 0.5) / 2^53` with `k` the top 53 bits of a 64-bit
//! output, so they lie strictly inside `(0, 1)`. Bounded integers use
//! Lemire's widening-multiply method with rejection. Continuous variates are
//! produced by inverse CDF from those uniforms.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::distributions::{cauchy_quantile, normal_quantile, t3_quantile};

/// Stream domains. Distinct domains never share a stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Permutation = 1,
    Data = 2,
    Calibration = 3,
    Verification = 4,
    Property = 5,
}

const INDEX_BITS: u32 = 48;

#[derive(Debug, Clone)]
pub struct Stream {
    inner: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64, domain: Domain, index: u64) -> Self {
        debug_assert!(index < (1 << INDEX_BITS));
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(((domain as u64) << INDEX_BITS) | (index & ((1 << INDEX_BITS) - 1)));
        Self { inner }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.next_u64() >> 11) as f64 + 0.5) * SCALE
    }

    /// Uniform integer in `0..bound` (unbiased).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(bound);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn bernoulli_half(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    pub fn normal(&mut self) -> f64 {
        normal_quantile(self.uniform())
    }

    pub fn student_t3(&mut self) -> f64 {
        t3_quantile(self.uniform())
    }

    pub fn cauchy(&mut self) -> f64 {
        cauchy_quantile(self.uniform())
    }

    /// Log-normal with `log X ~ N(0, 1)`.
    pub fn log_normal(&mut self) -> f64 {
        self.normal().exp()
    }

    /// Fisher-Yates shuffle of `0..n`, drawing swap partners from the top
    /// index down.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i as u64 + 1) as usize;
            p.swap(i, j);
        }
        p
    }
}
