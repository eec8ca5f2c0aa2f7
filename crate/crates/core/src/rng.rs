//! Seeded random streams.
//!
//! Every stream is a xoshiro256++ generator whose state is filled by
//! SplitMix64 from a 64-bit seed. Independent substreams for distinct
//! purposes (encoder init, per-sample data, per-epoch shuffles) are derived
//! by hashing `master ^ tag` through one SplitMix64 step, so the output of
//! any consumer never depends on how many numbers another consumer drew.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};

/// Purpose tags mixed into the master seed.
pub mod tag {
    pub const ENCODER: u64 = 0x656e_636f_6465_7200;
    pub const DECODER: u64 = 0x6465_636f_6465_7200;
    pub const PHYSICS: u64 = 0x7068_7973_6963_7300;
    pub const SHUFFLE: u64 = 0x7368_7566_666c_6500;
    pub const SAMPLE: u64 = 0x7361_6d70_6c65_0000;
}

/// One SplitMix64 output for `seed`.
pub fn splitmix(seed: u64) -> u64 {
    SplitMix64::seed_from_u64(seed).next_u64()
}

/// Seed for the substream identified by `tag` under `master`.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    splitmix(master ^ tag)
}

#[derive(Debug, Clone)]
pub struct Stream(Xoshiro256PlusPlus);

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn derived(master: u64, tag: u64) -> Self {
        Stream::new(derive_seed(master, tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        // Lemire's multiply-shift; the bias for n << 2^64 is negligible
        // and the mapping is fixed, which is what reproducibility needs.
        ((self.0.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
