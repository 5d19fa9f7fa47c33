//! Deterministic random source.
//!
//! All randomness in the kit flows through [`SeededRng`], a ChaCha8 stream
//! keyed from a 64-bit seed. ChaCha8 produces the same byte stream on every
//! platform, and every derived quantity here (uniforms, gaussians, shuffles)
//! is computed from that stream with fixed arithmetic, so a (seed, call
//! sequence) pair pins results bit-for-bit.
//!
//! Parallel workers never share a stream: callers derive an independent
//! child stream per (epoch, example, purpose) tag via [`SeededRng::derive`],
//! which makes results independent of worker count and scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer used to mix derivation tags into a child seed.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seeded deterministic generator (ChaCha8 keyed via SplitMix64 expansion).
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The seed this stream was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child stream for a tagged subtask.
    ///
    /// Derivation depends only on the base seed and the tags, never on how
    /// far this stream has been consumed, so `derive` may be called in any
    /// order from any thread holding a clone.
    pub fn derive(&self, tags: &[u64]) -> SeededRng {
        let mut state = splitmix64(self.seed);
        for &t in tags {
            state = splitmix64(state ^ splitmix64(t));
        }
        SeededRng::new(state)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo <= hi);
        let u: f64 = self.inner.random();
        lo + u * (hi - lo)
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is undefined");
        self.inner.random_range(0..n)
    }

    /// Bernoulli draw; always consumes exactly one uniform.
    pub fn chance(&mut self, p: f64) -> bool {
        let u: f64 = self.inner.random();
        u < p
    }

    /// Standard normal via Box-Muller (cosine branch only).
    pub fn normal(&mut self) -> f64 {
        let u1: f64 = self.inner.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = self.inner.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// `k` distinct indices drawn from `0..n` (partial Fisher-Yates).
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} distinct values from 0..{n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// Categorical draw proportional to `weights` (all nonnegative, sum > 0).
    pub fn choose_weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "weights must sum to a positive value");
        let mut u = self.uniform(0.0, total);
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }
}
