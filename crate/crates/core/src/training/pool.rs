use crate::grid::StateTensor;
use crate::real::Real;
use crate::rng::RngStream;

/// Fixed-size pool of evolving training states.
#[derive(Debug, Clone)]
pub struct SamplePool<T = f32> {
    states: Vec<StateTensor<T>>,
    /// Steps applied to each entry since it was last seeded.
    ages: Vec<u64>,
    resets: u64,
}

impl<T: Real> SamplePool<T> {
    /// `size` independent uniform(0, 1) states.
    pub fn new(
        size: usize,
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut RngStream,
    ) -> Self {
        let states = (0..size)
            .map(|_| StateTensor::uniform(channels, height, width, rng))
            .collect();
        Self {
            states,
            ages: vec![0; size],
            resets: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, idx: usize) -> &StateTensor<T> {
        &self.states[idx]
    }

    pub fn age(&self, idx: usize) -> u64 {
        self.ages[idx]
    }

    /// Total number of entries reseeded so far.
    pub fn resets(&self) -> u64 {
        self.resets
    }

    /// `count` distinct indices (partial Fisher-Yates).
    pub fn sample(&self, count: usize, rng: &mut RngStream) -> Vec<usize> {
        assert!(count <= self.states.len(), "batch larger than pool");
        let mut idx: Vec<usize> = (0..self.states.len()).collect();
        for i in 0..count {
            let j = i + rng.next_below(idx.len() - i);
            idx.swap(i, j);
        }
        idx.truncate(count);
        idx
    }

    pub fn write_back(&mut self, idx: usize, state: StateTensor<T>, steps: u64) {
        self.states[idx] = state;
        self.ages[idx] += steps;
    }

    /// Replaces entry `idx` with a fresh uniform state.
    pub fn reseed(&mut self, idx: usize, rng: &mut RngStream) {
        let s = &self.states[idx];
        self.states[idx] = StateTensor::uniform(s.channels(), s.height(), s.width(), rng);
        self.ages[idx] = 0;
        self.resets += 1;
    }

    pub fn all_finite(&self) -> bool {
        self.states.iter().all(|s| s.is_finite())
    }
}
