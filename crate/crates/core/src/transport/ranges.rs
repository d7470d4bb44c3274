use std::collections::BTreeMap;
use std::ops::Range;

/// Set of disjoint, non-adjacent half-open `u64` ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RangeSet {
    map: BTreeMap<u64, u64>,
}

impl RangeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Number of disjoint ranges.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn contains(&self, v: u64) -> bool {
        self.map.range(..=v).next_back().is_some_and(|(_, &end)| v < end)
    }

    pub fn min(&self) -> Option<u64> {
        self.map.keys().next().copied()
    }

    /// Largest contained value.
    pub fn max(&self) -> Option<u64> {
        self.map.values().next_back().map(|&e| e - 1)
    }

    /// Inserts a range; returns true if any new value was added.
    pub fn insert(&mut self, r: Range<u64>) -> bool {
        if r.is_empty() {
            return false;
        }
        let (mut start, mut end) = (r.start, r.end);
        if let Some((&s, &e)) = self.map.range(..=start).next_back() {
            if e >= end {
                return false;
            }
            if e >= start {
                start = s;
                self.map.remove(&s);
            }
        }
        let absorbed: Vec<(u64, u64)> = self.map.range(start..=end).map(|(&s, &e)| (s, e)).collect();
        for (s, e) in absorbed {
            self.map.remove(&s);
            end = end.max(e);
        }
        self.map.insert(start, end);
        true
    }

    pub fn insert_one(&mut self, v: u64) -> bool {
        self.insert(v..v + 1)
    }

    pub fn remove(&mut self, r: Range<u64>) {
        if r.is_empty() {
            return;
        }
        let overlapping: Vec<(u64, u64)> = self
            .map
            .range(..r.end)
            .rev()
            .take_while(|(_, &e)| e > r.start)
            .map(|(&s, &e)| (s, e))
            .collect();
        for (s, e) in overlapping {
            self.map.remove(&s);
            if s < r.start {
                self.map.insert(s, r.start);
            }
            if e > r.end {
                self.map.insert(r.end, e);
            }
        }
    }

    /// Drops every value below `floor`.
    pub fn remove_below(&mut self, floor: u64) {
        self.remove(0..floor);
    }

    /// Removes and returns up to `max_len` values from the lowest range.
    pub fn pop_front(&mut self, max_len: u64) -> Option<Range<u64>> {
        let (&s, &e) = self.map.iter().next()?;
        self.map.remove(&s);
        let end = e.min(s.saturating_add(max_len));
        if end < e {
            self.map.insert(end, e);
        }
        Some(s..end)
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = Range<u64>> + '_ {
        self.map.iter().map(|(&s, &e)| s..e)
    }

    /// Keeps only the `n` highest ranges.
    pub fn truncate_low(&mut self, n: usize) {
        while self.map.len() > n {
            let first = *self.map.keys().next().unwrap();
            self.map.remove(&first);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn merges_adjacent() {
        let mut s = RangeSet::new();
        s.insert(0..5);
        s.insert(10..15);
        s.insert(5..10);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0..15]);
    }

    #[test]
    fn pop_front_splits() {
        let mut s = RangeSet::new();
        s.insert(100..250);
        assert_eq!(s.pop_front(100), Some(100..200));
        assert_eq!(s.pop_front(100), Some(200..250));
        assert_eq!(s.pop_front(100), None);
    }

    proptest! {
        #[test]
        fn matches_naive_set(ops in proptest::collection::vec((any::<bool>(), 0u64..200, 0u64..30), 0..60)) {
            let mut s = RangeSet::new();
            let mut naive = BTreeSet::new();
            for (add, start, len) in ops {
                if add {
                    s.insert(start..start + len);
                    naive.extend(start..start + len);
                } else {
                    s.remove(start..start + len);
                    for v in start..start + len {
                        naive.remove(&v);
                    }
                }
            }
            for v in 0..240 {
                prop_assert_eq!(s.contains(v), naive.contains(&v));
            }
            // Canonical form: sorted, disjoint, non-adjacent.
            let ranges: Vec<_> = s.iter().collect();
            for w in ranges.windows(2) {
                prop_assert!(w[0].end < w[1].start);
            }
        }
    }
}
