use cladnet_core::Tensor64;
use rand::seq::index;
use rand::Rng;

/// One stored training example.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayItem {
    pub data: Tensor64,
    pub label: usize,
    pub subject: u32,
}

/// Fixed-capacity reservoir of past labeled windows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<ReplayItem>,
    seen: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            seen: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of items ever offered.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn items(&self) -> &[ReplayItem] {
        &self.items
    }

    /// Reservoir insertion: after `n` offers every offered item is held
    /// with probability `capacity / n`.
    pub fn insert<R: Rng + ?Sized>(&mut self, item: ReplayItem, rng: &mut R) {
        self.seen += 1;
        if self.capacity == 0 {
            return;
        }
        if self.items.len() < self.capacity {
            self.items.push(item);
            return;
        }
        let j = rng.random_range(0..self.seen);
        if (j as usize) < self.capacity {
            self.items[j as usize] = item;
        }
    }

    /// Up to `k` distinct items drawn uniformly. Consumes no randomness
    /// when the buffer is empty.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<&ReplayItem> {
        let k = k.min(self.items.len());
        if k == 0 {
            return Vec::new();
        }
        index::sample(rng, self.items.len(), k).into_iter().map(|i| &self.items[i]).collect()
    }
}
