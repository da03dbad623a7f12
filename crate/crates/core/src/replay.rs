//! Uniform experience replay.

use rand::Rng;

use crate::env::{JointAction, N_AGENTS, OBS_DIM, STATE_DIM};
use crate::label::PolicyLabel;

/// One stored step: observations and global state before and after, the
/// team policy labels, the joint action and the (incentive-adjusted) rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: [[f64; OBS_DIM]; N_AGENTS],
    pub state: [f64; STATE_DIM],
    pub labels: [PolicyLabel; N_AGENTS],
    pub actions: JointAction,
    pub rewards: [f64; N_AGENTS],
    pub next_obs: [[f64; OBS_DIM]; N_AGENTS],
    pub next_state: [f64; STATE_DIM],
    pub done: bool,
}

impl Transition {
    /// Labels agree within each team and every number is finite.
    pub fn is_well_formed(&self) -> bool {
        let finite = |xs: &[f64]| xs.iter().all(|v| v.is_finite());
        self.labels[0] == self.labels[1]
            && self.labels[2] == self.labels[3]
            && finite(&self.state)
            && finite(&self.next_state)
            && finite(&self.rewards)
            && self.obs.iter().chain(&self.next_obs).all(|o| finite(o))
            && self.actions.iter().all(|a| finite(a))
    }
}

/// Fixed-capacity ring buffer; once full, each push evicts the oldest item.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    cursor: usize,
    pushed: u64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::new(),
            cursor: 0,
            pushed: 0,
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

    /// Number of items ever pushed.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.pushed += 1;
    }

    pub fn get(&self, slot: usize) -> &T {
        &self.items[slot]
    }

    /// Insertion serial number (0-based, over the buffer's lifetime) of the
    /// item in `slot`.
    pub fn serial(&self, slot: usize) -> u64 {
        if self.pushed as usize <= self.capacity {
            slot as u64
        } else {
            let age = (slot + self.capacity - self.cursor) % self.capacity;
            self.pushed - self.capacity as u64 + age as u64
        }
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `batch` slot indices drawn uniformly with replacement, or `None` while
    /// the buffer holds fewer than `batch` items.
    pub fn sample_slots<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<usize>> {
        if self.items.len() < batch || self.items.is_empty() {
            return None;
        }
        Some(
            (0..batch)
                .map(|_| rng.random_range(0..self.items.len()))
                .collect(),
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&T>> {
        self.sample_slots(batch, rng)
            .map(|slots| slots.into_iter().map(|s| &self.items[s]).collect())
    }

    /// Raw slot storage, in slot order (not age order).
    pub fn slots(&self) -> &[T] {
        &self.items
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Rebuilds a buffer from its raw parts as returned by [`ReplayBuffer::slots`],
    /// [`ReplayBuffer::cursor`] and [`ReplayBuffer::total_pushed`].
    pub fn from_parts(capacity: usize, slots: Vec<T>, cursor: usize, total_pushed: u64) -> Option<Self> {
        if capacity == 0
            || slots.len() > capacity
            || cursor >= capacity
            || (slots.len() < capacity && cursor != slots.len() % capacity)
            || total_pushed < slots.len() as u64
        {
            return None;
        }
        Some(ReplayBuffer {
            capacity,
            items: slots,
            cursor,
            pushed: total_pushed,
        })
    }
}
