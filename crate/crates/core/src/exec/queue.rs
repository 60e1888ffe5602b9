//! Per-worker ready queues.
//!
//! The owner pops from the front (first come, first served); thieves take
//! from the back. Each queue is a mutex-protected deque so owner pops and
//! concurrent steals are linearizable.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

pub struct WorkerQueue<T> {
    owner: usize,
    items: Mutex<VecDeque<T>>,
    len: AtomicUsize,
}

impl<T> WorkerQueue<T> {
    pub fn new(owner: usize) -> Self {
        Self {
            owner,
            items: Mutex::new(VecDeque::new()),
            len: AtomicUsize::new(0),
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    /// Lock-free length; sequentially consistent so that sleeping workers
    /// and pushers agree on whether work is pending.
    pub fn len(&self) -> usize {
        self.len.load(Ordering::SeqCst)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push_back(&self, item: T) {
        let mut q = self.items.lock().unwrap();
        q.push_back(item);
        self.len.store(q.len(), Ordering::SeqCst);
    }

    /// Pushes unless the queue already holds `capacity` items. `on_accept`
    /// runs under the queue lock right before the push.
    pub fn push_back_bounded(
        &self,
        item: T,
        capacity: Option<usize>,
        on_accept: impl FnOnce(),
    ) -> Result<(), T> {
        let mut q = self.items.lock().unwrap();
        if capacity.is_some_and(|cap| q.len() >= cap) {
            return Err(item);
        }
        on_accept();
        q.push_back(item);
        self.len.store(q.len(), Ordering::SeqCst);
        Ok(())
    }

    pub fn pop_front(&self) -> Option<T> {
        if self.is_empty() {
            return None;
        }
        let mut q = self.items.lock().unwrap();
        let item = q.pop_front();
        self.len.store(q.len(), Ordering::SeqCst);
        item
    }

    pub fn steal_back(&self) -> Option<T> {
        if self.is_empty() {
            return None;
        }
        let mut q = self.items.lock().unwrap();
        let item = q.pop_back();
        self.len.store(q.len(), Ordering::SeqCst);
        item
    }
}

/// The set of worker queues plus per-worker steal counters.
pub struct WorkerQueues<T> {
    queues: Vec<WorkerQueue<T>>,
    steals: Vec<AtomicU64>,
}

impl<T> WorkerQueues<T> {
    pub fn new(workers: usize) -> Self {
        assert!(workers >= 1);
        Self {
            queues: (0..workers).map(WorkerQueue::new).collect(),
            steals: (0..workers).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    pub fn workers(&self) -> usize {
        self.queues.len()
    }

    pub fn queue(&self, worker: usize) -> &WorkerQueue<T> {
        &self.queues[worker]
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.queues.iter().map(WorkerQueue::len).collect()
    }

    pub fn total_len(&self) -> usize {
        self.queues.iter().map(WorkerQueue::len).sum()
    }

    pub fn steals(&self, worker: usize) -> u64 {
        self.steals[worker].load(Ordering::Relaxed)
    }

    /// Scans victims in ring order starting at `thief + 1` and takes one item
    /// from the back of the first non-empty queue.
    pub fn steal(&self, thief: usize) -> Option<T> {
        let n = self.queues.len();
        for offset in 1..n {
            let victim = (thief + offset) % n;
            if let Some(item) = self.queues[victim].steal_back() {
                self.steals[thief].fetch_add(1, Ordering::Relaxed);
                return Some(item);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::sync::Arc;

    #[test]
    fn owner_pops_front() {
        let q = WorkerQueue::new(0);
        for c in ['a', 'b', 'c'] {
            q.push_back(c);
        }
        assert_eq!(q.pop_front(), Some('a'));
        assert_eq!(q.steal_back(), Some('c'));
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn steal_from_empty_queues_returns_none() {
        let qs: WorkerQueues<char> = WorkerQueues::new(4);
        assert_eq!(qs.steal(0), None);
        assert_eq!(qs.steals(0), 0);
    }

    #[test]
    fn steal_takes_back_of_neighbour() {
        let qs = WorkerQueues::new(2);
        for c in ['a', 'b', 'c'] {
            qs.queue(1).push_back(c);
        }
        assert_eq!(qs.steal(0), Some('c'));
        assert_eq!(qs.steals(0), 1);
        assert_eq!(qs.queue(1).pop_front(), Some('a'));
        assert_eq!(qs.queue(1).pop_front(), Some('b'));
        assert_eq!(qs.queue(1).pop_front(), None);
    }

    #[test]
    fn steal_scans_in_ring_order() {
        let qs = WorkerQueues::new(4);
        qs.queue(0).push_back(0);
        qs.queue(1).push_back(1);
        // Thief 2 visits 3, 0, 1.
        assert_eq!(qs.steal(2), Some(0));
        assert_eq!(qs.steal(2), Some(1));
        assert_eq!(qs.steal(2), None);
        assert_eq!(qs.steals(2), 2);
    }

    #[test]
    fn bounded_push_rejects_when_full() {
        let q = WorkerQueue::new(0);
        let mut accepted = 0;
        assert!(q.push_back_bounded(1, Some(2), || accepted += 1).is_ok());
        assert!(q.push_back_bounded(2, Some(2), || accepted += 1).is_ok());
        assert_eq!(q.push_back_bounded(3, Some(2), || accepted += 1), Err(3));
        assert_eq!(accepted, 2);
        assert!(q.push_back_bounded(3, None, || ()).is_ok());
    }

    #[test]
    fn concurrent_owner_and_thieves_never_double_pop() {
        const ITEMS: usize = 20_000;
        const THIEVES: usize = 6;
        let qs = Arc::new(WorkerQueues::new(THIEVES + 1));
        for i in 0..ITEMS {
            qs.queue(0).push_back(i);
        }
        let mut handles = Vec::new();
        for t in 0..=THIEVES {
            let qs = qs.clone();
            handles.push(std::thread::spawn(move || {
                let mut got = Vec::new();
                loop {
                    let item = if t == 0 {
                        qs.queue(0).pop_front()
                    } else {
                        qs.steal(t)
                    };
                    match item {
                        Some(i) => got.push(i),
                        None if qs.queue(0).is_empty() => break,
                        None => {}
                    }
                }
                got
            }));
        }
        let mut seen = HashSet::new();
        let mut total = 0;
        for h in handles {
            for i in h.join().unwrap() {
                assert!(seen.insert(i), "item {i} popped twice");
                total += 1;
            }
        }
        assert_eq!(total, ITEMS);
    }
}
