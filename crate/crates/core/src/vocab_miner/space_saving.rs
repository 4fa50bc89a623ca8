//! Space-Saving heavy-hitter sketch.
//!
//! At most `capacity` items are monitored. A monitored item is incremented in
//! place; an unmonitored item takes a free slot with `(1, 0)`, or replaces the
//! minimum-count item `j` with `(c_j + 1, c_j)`. Among equal minimum counts the
//! smallest key is evicted, so the sketch state is a pure function of the
//! stream.

use std::borrow::Borrow;
use std::collections::BTreeSet;
use std::hash::Hash;

use rustc_hash::FxHashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counter {
    pub count: u64,
    pub error: u64,
}

#[derive(Debug, Clone)]
pub struct SpaceSavingSketch<K> {
    capacity: usize,
    counters: FxHashMap<K, Counter>,
    /// `(count, key)` for every monitored item; the first entry is the next
    /// eviction victim.
    by_count: BTreeSet<(u64, K)>,
    total: u64,
}

impl<K> SpaceSavingSketch<K>
where
    K: Ord + Hash + Clone,
{
    /// `capacity` is clamped to at least 1.
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            capacity,
            counters: FxHashMap::with_capacity_and_hasher(capacity.min(1 << 20), Default::default()),
            by_count: BTreeSet::new(),
            total: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.counters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counters.is_empty()
    }

    /// Number of items processed so far.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get<Q>(&self, item: &Q) -> Option<Counter>
    where
        K: Borrow<Q>,
        Q: Hash + Eq + ?Sized,
    {
        self.counters.get(item).copied()
    }

    pub fn counters(&self) -> impl Iterator<Item = (&K, Counter)> {
        self.counters.iter().map(|(k, c)| (k, *c))
    }

    /// Smallest monitored count, or 0 when empty.
    pub fn min_count(&self) -> u64 {
        self.by_count.first().map_or(0, |(c, _)| *c)
    }

    pub fn update(&mut self, item: K) {
        self.update_with(&item, |_| item.clone());
    }

    /// Like [`update`](Self::update) but only materializes an owned key when
    /// the item is not already monitored.
    pub fn update_ref<Q>(&mut self, item: &Q)
    where
        K: Borrow<Q> + for<'a> From<&'a Q>,
        Q: Hash + Eq + ?Sized,
    {
        self.update_with(item, |q| K::from(q));
    }

    fn update_with<Q>(&mut self, item: &Q, to_owned: impl FnOnce(&Q) -> K)
    where
        K: Borrow<Q>,
        Q: Hash + Eq + ?Sized,
    {
        self.total += 1;
        if let Some((key, counter)) = self.counters.get_key_value(item) {
            let key = key.clone();
            let old = counter.count;
            self.by_count.remove(&(old, key.clone()));
            self.by_count.insert((old + 1, key.clone()));
            if let Some(c) = self.counters.get_mut::<K>(&key) {
                c.count = old + 1;
            }
            return;
        }
        let key = to_owned(item);
        if self.counters.len() < self.capacity {
            self.by_count.insert((1, key.clone()));
            self.counters.insert(key, Counter { count: 1, error: 0 });
            return;
        }
        let (min, victim) = self.by_count.pop_first().expect("full sketch has a minimum");
        self.counters.remove::<K>(&victim);
        self.by_count.insert((min + 1, key.clone()));
        self.counters.insert(key, Counter { count: min + 1, error: min });
    }

    /// Up to `k` entries by count descending, ties by ascending key.
    pub fn topk(&self, k: usize) -> Vec<(K, u64, u64)> {
        let mut entries: Vec<_> = self.counters.iter().map(|(key, c)| (key.clone(), c.count, c.error)).collect();
        entries.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(k);
        entries
    }
}
