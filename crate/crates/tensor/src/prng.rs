//! Counter-based splittable PRNG.
//!
//! The `i`-th output (1-based) of a state with seed `s` is
//! `mix64(s + i·0x9E3779B97F4A7C15)` with `mix64` the SplitMix64 finalizer.
//! `split(key)` derives a child seed `mix64(s ^ mix64(key + 0x632BE59BD9B4E019))`
//! with its counter reset to zero. Everything is wrapping 64-bit integer
//! arithmetic, so streams are identical on every platform.

use rand_core::RngCore;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLIT_SALT: u64 = 0x632B_E59B_D9B4_E019;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PrngState {
    pub seed: u64,
    pub counter: u64,
}

impl PrngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// The value the next call to [`next_u64`](Self::next_u64) returns.
    pub fn peek_u64(&self) -> u64 {
        mix64(self.seed.wrapping_add(self.counter.wrapping_add(1).wrapping_mul(GAMMA)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.peek_u64();
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below(0)");
        // Lemire's multiply-shift; bias is below 2^-64·n, irrelevant here.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Independent child stream keyed by `key`.
    pub fn split(&self, key: u64) -> PrngState {
        PrngState::new(mix64(self.seed ^ mix64(key.wrapping_add(SPLIT_SALT))))
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Functional form: the draw and the advanced state.
pub fn prng_next_uniform(state: PrngState) -> (f64, PrngState) {
    let mut s = state;
    let v = s.next_uniform();
    (v, s)
}

impl RngCore for PrngState {
    fn next_u32(&mut self) -> u32 {
        (PrngState::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        PrngState::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = PrngState::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
