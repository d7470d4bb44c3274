use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug)]
struct Entry<E> {
    at: Duration,
    tie: u64,
    seq: u64,
    event: E,
}

impl<E> Entry<E> {
    fn key(&self) -> (Duration, u64, u64) {
        (self.at, self.tie, self.seq)
    }
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

/// Time-ordered event queue. Events at the same instant fire in insertion
/// order, or in a seeded random order when an interleaving RNG is supplied.
#[derive(Debug)]
pub struct Scheduler<E> {
    now: Duration,
    seq: u64,
    heap: BinaryHeap<Reverse<Entry<E>>>,
    interleave: Option<ChaCha8Rng>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new(None)
    }
}

impl<E> Scheduler<E> {
    pub fn new(interleave: Option<ChaCha8Rng>) -> Self {
        Self { now: Duration::ZERO, seq: 0, heap: BinaryHeap::new(), interleave }
    }

    pub fn now(&self) -> Duration {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules `event` at `at`, clamped to the current time.
    pub fn schedule(&mut self, at: Duration, event: E) {
        let tie = self.interleave.as_mut().map_or(0, |r| r.gen());
        self.seq += 1;
        self.heap.push(Reverse(Entry { at: at.max(self.now), tie, seq: self.seq, event }));
    }

    pub fn peek_time(&self) -> Option<Duration> {
        self.heap.peek().map(|Reverse(e)| e.at)
    }

    /// Pops the next event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(Duration, E)> {
        let Reverse(e) = self.heap.pop()?;
        debug_assert!(e.at >= self.now);
        self.now = e.at;
        Some((e.at, e.event))
    }
}
