//! Uniform reservoir sampling (Algorithm R), used as the random-sampling
//! baseline at the same retained-sample budget as a sketch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::rng_from_seed;

/// Baseline budget `ceil(3k + 2 ln(n / (2k/3)))`, at least 1.
///
/// The logarithm is natural; see the README for the convention.
pub fn budget_capacity(k: u32, n: u64) -> usize {
    let k = k as f64;
    let raw = 3.0 * k + 2.0 * (n as f64 / (2.0 * k / 3.0)).ln();
    raw.ceil().max(1.0) as usize
}

#[derive(Debug, Clone)]
pub struct ReservoirSummary<T> {
    capacity: usize,
    items: Vec<T>,
    seen: u64,
    rng: ChaCha8Rng,
}

impl<T> ReservoirSummary<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity >= 1, "reservoir capacity must be >= 1");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 20)),
            seen: 0,
            rng: rng_from_seed(seed),
        }
    }

    /// Reservoir sized by [`budget_capacity`].
    pub fn with_budget(k: u32, n: u64, seed: u64) -> Self {
        Self::new(budget_capacity(k, n), seed)
    }

    /// Keeps the first `capacity` items; afterwards item `t` replaces a
    /// uniformly chosen slot with probability `capacity / t`.
    pub fn update(&mut self, x: T) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(x);
            return;
        }
        let j = self.rng.random_range(0..self.seen);
        if (j as usize) < self.capacity {
            self.items[j as usize] = x;
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn into_items(self) -> Vec<T> {
        self.items
    }
}
