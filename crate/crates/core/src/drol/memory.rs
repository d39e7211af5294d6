//! Bounded FIFO of (state, best decision) samples for replay training.

use std::collections::VecDeque;

use nalgebra::DVector;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: DVector<f64>,
    pub target: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMemory {
    capacity: usize,
    samples: VecDeque<Sample>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            samples: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Training starts once this many samples are held.
    pub fn warmup_threshold(&self) -> usize {
        (self.capacity / 10).clamp(1, 50)
    }

    pub fn push(&mut self, sample: Sample) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
    }

    pub fn get(&self, i: usize) -> Option<&Sample> {
        self.samples.get(i)
    }

    /// Uniform batch indices, drawn with replacement only when fewer samples
    /// than `batch` are held.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        let n = self.samples.len();
        if n == 0 {
            return Vec::new();
        }
        if n >= batch {
            index::sample(rng, n, batch).into_vec()
        } else {
            (0..batch).map(|_| rng.random_range(0..n)).collect()
        }
    }
}
