//! Seeded, platform-independent random streams.
//!
//! Every consumer gets its own ChaCha8 stream derived from `(seed, stream)`,
//! so adding a consumer never perturbs the draws seen by another one.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Named stream ids used by the training harness.
pub mod streams {
    pub const ENV: u64 = 0;
    pub const ACTION: u64 = 1;
    pub const REPLAY: u64 = 2;
    pub const SELECTION: u64 = 3;
    pub const INIT: u64 = 4;
    pub const METRICS: u64 = 5;
    pub const EVAL: u64 = 6;
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniform size-`k` subset of `0..n`, sorted.
    pub fn subset(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k.min(n) {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        let mut out = pool[..k.min(n)].to_vec();
        out.sort_unstable();
        out
    }

    /// Index drawn proportionally to non-negative `weights` with known sum.
    pub fn categorical(&mut self, weights: &[f64], total: f64) -> usize {
        let target = self.uniform() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if target < acc {
                return i;
            }
        }
        // rounding can leave target == total; return the last positive weight
        weights
            .iter()
            .rposition(|&w| w > 0.0)
            .unwrap_or(weights.len() - 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::with_stream(42, 3);
        let mut b = SeededRng::with_stream(42, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = SeededRng::with_stream(42, 4);
        assert_ne!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn subset_is_sorted_and_distinct() {
        let mut r = SeededRng::new(1);
        for _ in 0..200 {
            let s = r.subset(10, 4);
            assert_eq!(s.len(), 4);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|&i| i < 10));
        }
    }

    #[test]
    fn categorical_skips_zero_weights() {
        let mut r = SeededRng::new(9);
        for _ in 0..1000 {
            let i = r.categorical(&[0.0, 1.0, 0.0, 2.0], 3.0);
            assert!(i == 1 || i == 3);
        }
    }
}
