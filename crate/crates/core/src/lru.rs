//! Byte-bounded LRU bookkeeping.
//!
//! Tracks only keys and sizes; callers keep the values. Used by the real
//! store's memory tier and by the simulator's model of it.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

#[derive(Debug, Clone)]
pub struct ByteLru<K> {
    capacity: u64,
    used: u64,
    tick: u64,
    entries: HashMap<K, (u64, u64)>,
    order: BTreeMap<u64, K>,
}

impl<K: Clone + Eq + Hash> ByteLru<K> {
    pub fn new(capacity: u64) -> Self {
        Self {
            capacity,
            used: 0,
            tick: 0,
            entries: HashMap::new(),
            order: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &K) -> bool {
        self.entries.contains_key(key)
    }

    /// Marks `key` most recently used. Returns false if absent.
    pub fn touch(&mut self, key: &K) -> bool {
        let Some((_, stamp)) = self.entries.get_mut(key) else {
            return false;
        };
        let old = *stamp;
        self.tick += 1;
        *stamp = self.tick;
        let k = self.order.remove(&old).expect("order in sync");
        self.order.insert(self.tick, k);
        true
    }

    /// Inserts (or refreshes) `key` as most recently used and evicts from the
    /// cold end until the capacity holds. An entry larger than the whole
    /// capacity is not admitted. Returns the evicted keys, oldest first.
    pub fn insert(&mut self, key: K, size: u64) -> Vec<K> {
        if self.touch(&key) {
            return Vec::new();
        }
        if size > self.capacity {
            return Vec::new();
        }
        self.tick += 1;
        self.entries.insert(key.clone(), (size, self.tick));
        self.order.insert(self.tick, key);
        self.used += size;
        self.evict_to(self.capacity)
    }

    pub fn remove(&mut self, key: &K) -> bool {
        match self.entries.remove(key) {
            Some((size, stamp)) => {
                self.order.remove(&stamp);
                self.used -= size;
                true
            }
            None => false,
        }
    }

    /// Changes the capacity, evicting in LRU order if needed.
    pub fn set_capacity(&mut self, capacity: u64) -> Vec<K> {
        self.capacity = capacity;
        self.evict_to(capacity)
    }

    fn evict_to(&mut self, limit: u64) -> Vec<K> {
        let mut evicted = Vec::new();
        while self.used > limit {
            let (_, key) = self.order.pop_first().expect("used > 0 implies entries");
            let (size, _) = self.entries.remove(&key).expect("entries in sync");
            self.used -= size;
            evicted.push(key);
        }
        evicted
    }

    /// Keys from least to most recently used.
    pub fn keys_lru_order(&self) -> impl Iterator<Item = &K> {
        self.order.values()
    }
}
