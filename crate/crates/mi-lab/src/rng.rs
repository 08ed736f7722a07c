//! Seeded random streams.
//!
//! One master seed fans out into independent substreams through
//! [`derive_seed`], so grid cells and Monte Carlo trials never share RNG
//! state and can run in any order (or in parallel) with identical results.
//!
//! The generator is ChaCha8; the distribution code on top of it (uniform
//! doubles, Box-Muller normals, Fisher-Yates shuffles) is written out here
//! so that streams stay stable across dependency upgrades.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// One splitmix64 round; the standard 64-bit mixer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed for substream `(a, b)` of `master`.
///
/// Used as `derive_seed(master, run_index, grid_index)` for benchmark runs
/// and `derive_seed(master, demo_tag, trial_index)` for Monte Carlo trials.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut s = master;
    let mut h = splitmix64(&mut s);
    s ^= a.wrapping_mul(0xa076_1d64_78bd_642f);
    h ^= splitmix64(&mut s);
    s ^= b.wrapping_mul(0xe703_7ed1_a0b4_28db);
    h ^= splitmix64(&mut s);
    h
}

/// A seeded stream of doubles, normals, indices, and shuffles.
pub struct RunRng {
    inner: ChaCha8Rng,
}

impl RunRng {
    pub fn new(seed: u64) -> Self {
        RunRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`; safe to pass to `ln`.
    pub fn uniform_open(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Uniform integer in `0..n`, unbiased via rejection.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// One pair of independent standard normals (Box-Muller).
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let r = (-2.0 * self.uniform_open().ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * self.uniform();
        (r * theta.cos(), r * theta.sin())
    }

    /// Fill `out` with standard normals. Odd lengths discard the spare
    /// half of the final Box-Muller pair, so the stream position depends
    /// only on the call sequence, never on retained state.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        let mut i = 0;
        while i + 1 < out.len() {
            let (a, b) = self.normal_pair();
            out[i] = a;
            out[i + 1] = b;
            i += 2;
        }
        if i < out.len() {
            out[i] = self.normal_pair().0;
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
