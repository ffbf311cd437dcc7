//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator. A stream remembers the 64-bit key it
//! was created from, so [`Rng::substream`] derives child streams from
//! `(key, purpose, index)` alone, independent of how many draws the parent
//! has already produced. Parallel code asks for one substream per work item
//! and never shares a generator.
//!
//! Key derivation: `child = splitmix64(key ^ fnv1a64(purpose) ^ splitmix64(index))`.
//! Normal draws use the ziggurat sampler from `rand_distr`. This choice is
//! part of the reproducibility contract; changing it changes every output.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct Rng {
    key: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: seed,
            inner: ChaCha8Rng::seed_from_u64(splitmix64(seed)),
        }
    }

    /// Independent child stream keyed by `(purpose, index)`.
    pub fn substream(&self, purpose: &str, index: u64) -> Rng {
        Rng::new(splitmix64(self.key ^ fnv1a64(purpose) ^ splitmix64(index)))
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}
