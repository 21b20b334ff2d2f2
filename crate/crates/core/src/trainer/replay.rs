use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use super::rollout::{Episode, Transition};

/// FIFO experience replay over whole episodes; samples are materialized
/// into token histories on demand.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    t_max: usize,
    entries: VecDeque<(Arc<Episode>, usize, usize)>,
    rounds_seen: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, t_max: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            t_max,
            entries: VecDeque::new(),
            rounds_seen: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Adds every decision step of `episode`, evicting the oldest steps.
    pub fn push_episode(&mut self, episode: Arc<Episode>) {
        let round = self.rounds_seen;
        self.rounds_seen += 1;
        for t in 0..episode.len() {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back((episode.clone(), t, round));
        }
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<usize> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        (0..batch).map(|_| rng.random_range(0..self.entries.len())).collect()
    }

    /// Round number of the entry at `index`.
    pub fn round_of(&self, index: usize) -> usize {
        self.entries[index].2
    }

    pub fn get(&self, index: usize) -> Transition {
        let (ep, t, _) = &self.entries[index];
        ep.transition(*t, self.t_max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<Transition> {
        self.sample_indices(rng, batch).into_iter().map(|i| self.get(i)).collect()
    }
}
