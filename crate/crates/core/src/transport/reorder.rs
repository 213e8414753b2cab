use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReorderError {
    #[error("reorder buffer full: {capacity} chunks pending, next expected {next_expected}")]
    BackpressureExceeded { capacity: usize, next_expected: u64 },
}

pub const DEFAULT_REORDER_CAPACITY: usize = 4096;

/// Receiver-side resequencing of chunks that arrive over different
/// interfaces. Payloads come out in chunk-id order, each exactly once.
#[derive(Debug, Clone)]
pub struct ReorderBuffer<T> {
    next_expected: u64,
    pending: BTreeMap<u64, T>,
    capacity: usize,
}

impl<T> Default for ReorderBuffer<T> {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_REORDER_CAPACITY)
    }
}

impl<T> ReorderBuffer<T> {
    pub fn with_capacity(capacity: usize) -> Self {
        ReorderBuffer { next_expected: 0, pending: BTreeMap::new(), capacity }
    }

    pub fn next_expected(&self) -> u64 {
        self.next_expected
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Accepts one chunk and returns every payload that became deliverable,
    /// in order. Duplicates and already-delivered chunks yield nothing.
    pub fn accept(&mut self, chunk_id: u64, payload: T) -> Result<Vec<T>, ReorderError> {
        if chunk_id < self.next_expected || self.pending.contains_key(&chunk_id) {
            return Ok(Vec::new());
        }
        if chunk_id > self.next_expected {
            if self.pending.len() >= self.capacity {
                return Err(ReorderError::BackpressureExceeded {
                    capacity: self.capacity,
                    next_expected: self.next_expected,
                });
            }
            self.pending.insert(chunk_id, payload);
            return Ok(Vec::new());
        }
        let mut out = vec![payload];
        self.next_expected += 1;
        while let Some(p) = self.pending.remove(&self.next_expected) {
            out.push(p);
            self.next_expected += 1;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contiguity() {
        let mut buf = ReorderBuffer::default();
        assert_eq!(buf.accept(2, 2).unwrap(), Vec::<u64>::new());
        assert_eq!(buf.accept(0, 0).unwrap(), vec![0]);
        assert_eq!(buf.accept(1, 1).unwrap(), vec![1, 2]);
        assert_eq!(buf.next_expected(), 3);
        assert_eq!(buf.pending_len(), 0);
    }

    #[test]
    fn duplicates_discarded() {
        let mut buf = ReorderBuffer::default();
        assert_eq!(buf.accept(0, "a").unwrap(), vec!["a"]);
        assert!(buf.accept(0, "again").unwrap().is_empty());
        assert!(buf.accept(3, "c").unwrap().is_empty());
        assert!(buf.accept(3, "c-dup").unwrap().is_empty());
        assert_eq!(buf.pending_len(), 1);
    }

    #[test]
    fn over_capacity_signals_backpressure() {
        let mut buf = ReorderBuffer::with_capacity(2);
        buf.accept(5, ()).unwrap();
        buf.accept(6, ()).unwrap();
        assert_eq!(
            buf.accept(7, ()),
            Err(ReorderError::BackpressureExceeded { capacity: 2, next_expected: 0 })
        );
        // the expected chunk is always accepted, it frees space
        assert!(buf.accept(0, ()).unwrap().len() == 1);
    }
}
