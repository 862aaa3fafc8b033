//! Deterministic splitmix64 random stream.
//!
//! Every stochastic choice in the crate (initial states, update masks, pool
//! sampling, permutation shuffles) draws from an [`RngStream`]. Streams are
//! single-owner; independent streams are derived with [`RngStream::fork`] or
//! [`derive_seed`].

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
// Multiplicative inverse of GOLDEN_GAMMA modulo 2^64.
const GOLDEN_GAMMA_INV: u64 = 0xF1DE_83E1_9937_733D;

#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `index` of `seed`.
///
/// The map `index -> derive_seed(seed, index)` is a composition of bijections
/// on `u64`, so distinct indices never share a seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    finalize(seed ^ finalize(index.wrapping_add(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Raw 64-bit state. Useful for checkpointing a stream position.
    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        finalize(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (`n > 0`).
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // floor(u * n) with a 53-bit uniform; bias is below 2^-53 * n.
        ((self.next_uniform() * n as f64) as usize).min(n - 1)
    }

    /// Number of 64-bit draws taken since the stream was at `earlier`.
    pub fn draws_since(&self, earlier: u64) -> u64 {
        self.state
            .wrapping_sub(earlier)
            .wrapping_mul(GOLDEN_GAMMA_INV)
    }

    /// Independent child stream for `index`. Does not advance `self`.
    pub fn fork(&self, index: u64) -> RngStream {
        RngStream::new(derive_seed(self.state, index))
    }

    /// Fisher-Yates shuffle, last position first.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}
