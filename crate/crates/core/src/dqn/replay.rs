use rand::Rng;

use crate::agents::Transition;
use crate::rng::SimRng;

/// Fixed-capacity FIFO of transitions; the oldest entry is overwritten
/// once full.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    items: Vec<Transition>,
    capacity: usize,
    inserted: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayMemory {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            inserted: 0,
        }
    }

    pub fn remember(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.items[slot] = t;
        }
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total insertions, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform draw with replacement. Panics on an empty memory.
    pub fn sample(&self, rng: &mut SimRng) -> &Transition {
        &self.items[rng.random_range(0..self.items.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, State};

    fn t(reward: f64) -> Transition {
        Transition {
            state: State::default(),
            action: Action::Radar,
            reward,
            next_state: State::default(),
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut m = ReplayMemory::new(2);
        assert_eq!(m.len(), 0);
        for r in [1.0, 2.0, 3.0] {
            m.remember(t(r));
        }
        let mut rewards: Vec<f64> = m.iter().map(|t| t.reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0]);
    }

    #[test]
    fn size_caps_at_capacity() {
        let mut m = ReplayMemory::new(1000);
        for i in 0..10_000 {
            m.remember(t(i as f64));
        }
        assert_eq!(m.len(), 1000);
        assert_eq!(m.inserted(), 10_000);
        // Exactly the newest thousand survive.
        assert!(m.iter().all(|t| t.reward >= 9000.0));
    }
}
