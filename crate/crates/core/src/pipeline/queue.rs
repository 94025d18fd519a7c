//! Bounded FIFO queues between pipeline stages.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Instant;

use crate::error::{Error, Result};

/// Pull-based stage queue. Implementations must keep `len() <= capacity()`.
pub trait StageQueue<T>: Send + Sync {
    /// Blocks while the queue is full. Fails once the queue is closed.
    fn push(&self, item: T) -> Result<()>;

    /// Never blocks; a full queue yields [`Error::Backpressure`].
    fn try_push(&self, item: T) -> std::result::Result<(), (T, Error)>;

    /// Blocks until an item is available; `None` once closed and drained.
    fn pop(&self) -> Option<T>;

    /// Rejects further pushes and wakes all waiters.
    fn close(&self);

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn capacity(&self) -> usize;
}

struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    high_water: usize,
    depth_log: Vec<(f64, usize)>,
}

/// In-process [`StageQueue`] on a mutex and two condition variables.
pub struct BoundedQueue<T> {
    capacity: usize,
    epoch: Instant,
    state: Mutex<State<T>>,
    not_full: Condvar,
    not_empty: Condvar,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        Self::with_epoch(capacity, Instant::now())
    }

    /// Depth samples are timestamped in seconds since `epoch`.
    pub fn with_epoch(capacity: usize, epoch: Instant) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("queue capacity must be positive"));
        }
        Ok(Self {
            capacity,
            epoch,
            state: Mutex::new(State {
                items: VecDeque::with_capacity(capacity),
                closed: false,
                high_water: 0,
                depth_log: vec![(0.0, 0)],
            }),
            not_full: Condvar::new(),
            not_empty: Condvar::new(),
        })
    }

    fn lock(&self) -> MutexGuard<'_, State<T>> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn note_depth(&self, state: &mut State<T>) {
        let depth = state.items.len();
        assert!(depth <= self.capacity, "queue over capacity: {depth} > {}", self.capacity);
        state.high_water = state.high_water.max(depth);
        state.depth_log.push((self.epoch.elapsed().as_secs_f64(), depth));
    }

    /// Largest depth ever observed.
    pub fn high_water(&self) -> usize {
        self.lock().high_water
    }

    /// `(seconds, depth)` after every change.
    pub fn depth_log(&self) -> Vec<(f64, usize)> {
        self.lock().depth_log.clone()
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }
}

impl<T: Send> StageQueue<T> for BoundedQueue<T> {
    fn push(&self, item: T) -> Result<()> {
        let mut state = self.lock();
        while !state.closed && state.items.len() >= self.capacity {
            state = self.not_full.wait(state).unwrap_or_else(|p| p.into_inner());
        }
        if state.closed {
            return Err(Error::QueueClosed);
        }
        state.items.push_back(item);
        self.note_depth(&mut state);
        self.not_empty.notify_one();
        Ok(())
    }

    fn try_push(&self, item: T) -> std::result::Result<(), (T, Error)> {
        let mut state = self.lock();
        if state.closed {
            return Err((item, Error::QueueClosed));
        }
        if state.items.len() >= self.capacity {
            return Err((item, Error::Backpressure { capacity: self.capacity }));
        }
        state.items.push_back(item);
        self.note_depth(&mut state);
        self.not_empty.notify_one();
        Ok(())
    }

    fn pop(&self) -> Option<T> {
        let mut state = self.lock();
        loop {
            if let Some(item) = state.items.pop_front() {
                self.note_depth(&mut state);
                self.not_full.notify_one();
                return Some(item);
            }
            if state.closed {
                return None;
            }
            state = self.not_empty.wait(state).unwrap_or_else(|p| p.into_inner());
        }
    }

    fn close(&self) {
        self.lock().closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    fn len(&self) -> usize {
        self.lock().items.len()
    }

    fn capacity(&self) -> usize {
        self.capacity
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::thread;

    #[test]
    fn fifo_and_close() {
        let q = BoundedQueue::new(3).unwrap();
        q.push(1).unwrap();
        q.push(2).unwrap();
        assert_eq!(q.pop(), Some(1));
        q.close();
        assert!(matches!(q.push(3), Err(Error::QueueClosed)));
        assert_eq!(q.pop(), Some(2));
        assert_eq!(q.pop(), None);
    }

    #[test]
    fn full_queue_signals_backpressure() {
        let q = BoundedQueue::new(1).unwrap();
        q.try_push("a").unwrap();
        match q.try_push("b") {
            Err((item, Error::Backpressure { capacity })) => assert_eq!((item, capacity), ("b", 1)),
            other => panic!("expected backpressure, got {other:?}"),
        }
        assert!(BoundedQueue::<u8>::new(0).is_err());
    }

    #[test]
    fn producers_block_and_nothing_is_lost() {
        let q = Arc::new(BoundedQueue::new(4).unwrap());
        let producers: Vec<_> = (0..4)
            .map(|p| {
                let q = Arc::clone(&q);
                thread::spawn(move || {
                    for i in 0..500 {
                        q.push(p * 1000 + i).unwrap();
                    }
                })
            })
            .collect();
        let consumers: Vec<_> = (0..3)
            .map(|_| {
                let q = Arc::clone(&q);
                thread::spawn(move || {
                    let mut got = Vec::new();
                    while let Some(v) = q.pop() {
                        got.push(v);
                    }
                    got
                })
            })
            .collect();
        for p in producers {
            p.join().unwrap();
        }
        q.close();
        let mut all: Vec<i32> = consumers.into_iter().flat_map(|c| c.join().unwrap()).collect();
        all.sort();
        let expected: Vec<i32> = (0..4).flat_map(|p| (0..500).map(move |i| p * 1000 + i)).collect();
        assert_eq!(all, expected);
        assert!(q.high_water() <= 4);
        assert!(q.depth_log().iter().all(|&(_, d)| d <= 4));
    }
}
