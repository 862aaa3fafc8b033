//! Fixtures shared by the benchmarks.

use nca_core::{NcaParams, RngStream, StateTensor};

/// Parameters with a small random output layer, so rollouts actually move.
pub fn active_params(channels: usize, hidden: usize, seed: u64) -> NcaParams<f32> {
    let mut rng = RngStream::new(seed);
    let mut p = NcaParams::init(channels, hidden, &mut rng);
    for w in p.w2_mut() {
        *w = (rng.next_uniform() as f32 - 0.5) * 2e-3;
    }
    p
}

pub fn noise_state(channels: usize, size: usize, seed: u64) -> StateTensor<f32> {
    StateTensor::uniform(channels, size, size, &mut RngStream::new(seed))
}
