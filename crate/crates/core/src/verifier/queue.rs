use std::collections::VecDeque;
use std::sync::Arc;

use crate::fingerprint::{FeatureMap, PatchKey};

#[derive(Debug, Clone)]
pub struct QueueEntry {
    pub key: PatchKey,
    /// Unit-norm pooled summary used for mining.
    pub summary: Vec<f64>,
    pub map: Arc<FeatureMap>,
}

/// Fixed-capacity FIFO of recent feature maps for hard-negative mining.
#[derive(Debug, Clone)]
pub struct NegativeQueue {
    capacity: usize,
    entries: VecDeque<QueueEntry>,
}

impl NegativeQueue {
    pub fn new(capacity: usize) -> Self {
        NegativeQueue {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry, evicting the oldest once full. Returns the evicted entry.
    pub fn push(&mut self, entry: QueueEntry) -> Option<QueueEntry> {
        if self.capacity == 0 {
            return Some(entry);
        }
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(entry);
        evicted
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    /// The `k` entries most cosine-similar to `summary`, skipping `exclude_image`.
    /// Returns fewer when the queue holds fewer eligible entries.
    pub fn hardest(&self, summary: &[f64], k: usize, exclude_image: &str) -> Vec<&QueueEntry> {
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.key.image_id != exclude_image)
            .map(|(i, e)| (e.summary.iter().zip(summary).map(|(a, b)| a * b).sum(), i))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(k).map(|(_, i)| &self.entries[i]).collect()
    }
}
