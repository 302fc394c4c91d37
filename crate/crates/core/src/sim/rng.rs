//! Seeded random stream shared by the simulator and the trainer.
//!
//! Generator: xoshiro256** with its 256-bit state `s[0..4]` filled from the
//! 64-bit seed by four successive SplitMix64 outputs
//! (`z += 0x9e3779b97f4a7c15; z = (z ^ z>>30) * 0xbf58476d1ce4e5b9;
//! z = (z ^ z>>27) * 0x94d049bb133111eb; out = z ^ z>>31`).
//!
//! Each `next_u64` returns `rotl(s1 * 5, 7) * 9` and then advances
//! `t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t; s3 = rotl(s3, 45)`.
//!
//! Derived draws:
//! - `next_f64`: `(next_u64 >> 11) * 2^-53`, in `[0, 1)`.
//! - `uniform_int(lo, hi)` (inclusive): `lo + ((next_u64 as u128 * (hi - lo + 1)) >> 64)`.
//! - `uniform(lo, hi)`: `lo + (hi - lo) * next_f64`.
//! - `shuffle`: Fisher–Yates from the back, `j = uniform_int(0, i)` for `i = n-1 .. 1`.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone)]
pub struct SimRng(Xoshiro256StarStar);

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_int(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi, "empty range {lo}..={hi}");
        let span = (hi - lo) as u128 + 1;
        lo + ((self.next_u64() as u128 * span) >> 64) as i64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_int(0, i as i64) as usize;
            items.swap(i, j);
        }
    }
}
