use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

/// Outcome of one block access.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Access<K> {
    pub hit: bool,
    /// Block pushed out to make room, with its dirty bit.
    pub evicted: Option<(K, bool)>,
}

/// Strict LRU residency model over fixed-size blocks with write-back dirty bits.
///
/// Only residency is tracked; block contents live elsewhere.
#[derive(Debug, Clone)]
pub struct LruBlocks<K> {
    capacity: usize,
    tick: u64,
    resident: HashMap<K, (u64, bool)>,
    order: BTreeMap<u64, K>,
}

impl<K: Copy + Eq + Hash> LruBlocks<K> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "cache must hold at least one block");
        Self {
            capacity,
            tick: 0,
            resident: HashMap::new(),
            order: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.resident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resident.is_empty()
    }

    pub fn contains(&self, key: &K) -> bool {
        self.resident.contains_key(key)
    }

    /// Touches `key`, allocating it on a miss (for reads and writes alike).
    pub fn access(&mut self, key: K, write: bool) -> Access<K> {
        self.tick += 1;
        if let Some((last, dirty)) = self.resident.get_mut(&key) {
            self.order.remove(last);
            *last = self.tick;
            *dirty |= write;
            self.order.insert(self.tick, key);
            return Access {
                hit: true,
                evicted: None,
            };
        }
        let evicted = if self.resident.len() == self.capacity {
            let (_, victim) = self.order.pop_first().expect("full cache has an LRU block");
            let (_, dirty) = self.resident.remove(&victim).expect("ordered block is resident");
            Some((victim, dirty))
        } else {
            None
        };
        self.resident.insert(key, (self.tick, write));
        self.order.insert(self.tick, key);
        Access {
            hit: false,
            evicted,
        }
    }

    /// Marks every dirty block matching `filter` clean and returns how many there were.
    pub fn clean(&mut self, mut filter: impl FnMut(&K) -> bool) -> usize {
        let mut n = 0;
        for (key, (_, dirty)) in self.resident.iter_mut() {
            if *dirty && filter(key) {
                *dirty = false;
                n += 1;
            }
        }
        n
    }
}
