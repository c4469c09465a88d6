use std::collections::HashMap;

/// Per-episode visit counts keyed by a hashed state.
#[derive(Debug, Clone, Default)]
pub struct EpisodicCounter {
    counts: HashMap<u64, u32>,
}

impl EpisodicCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Called at every environment reset.
    pub fn clear(&mut self) {
        self.counts.clear();
    }

    pub fn visit(&mut self, key: u64) -> u32 {
        let c = self.counts.entry(key).or_insert(0);
        *c += 1;
        *c
    }

    pub fn count(&self, key: u64) -> u32 {
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Registers the visit, then returns `β / √N_ep(key)`.
pub fn intrinsic_bonus(counter: &mut EpisodicCounter, key: u64, beta: f64) -> f64 {
    if beta == 0.0 {
        counter.visit(key);
        return 0.0;
    }
    let n = counter.visit(key);
    beta / f64::from(n).sqrt()
}
