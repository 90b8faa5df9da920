use crate::error::{Error, Result};
use crate::net::{Matrix, Scalar};

use super::loss::normalize;

/// Fixed-capacity FIFO ring of unit-norm key vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyQueue<T> {
    capacity: usize,
    slots: Vec<Vec<T>>,
    /// Next slot to overwrite once full; equals the oldest entry.
    cursor: usize,
}

impl<T: Scalar> KeyQueue<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("queue capacity must be positive".into()));
        }
        Ok(Self { capacity, slots: Vec::with_capacity(capacity), cursor: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Stored keys in storage order.
    pub fn iter(&self) -> impl Iterator<Item = &[T]> + Clone {
        self.slots.iter().map(Vec::as_slice)
    }

    /// Stored keys from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &[T]> {
        let (newer, older) = self.slots.split_at(self.cursor.min(self.slots.len()));
        older.iter().chain(newer).map(Vec::as_slice)
    }

    /// L2-normalize and append each row, evicting the oldest entries beyond capacity.
    pub fn push_batch(&mut self, keys: &Matrix<T>) -> Result<()> {
        if keys.rows() > self.capacity {
            return Err(Error::BatchTooLarge { batch: keys.rows(), capacity: self.capacity });
        }
        let units = keys.iter_rows().map(|k| normalize(k).map(|(u, _)| u)).collect::<Result<Vec<_>>>()?;
        for u in units {
            if self.slots.len() < self.capacity {
                self.slots.push(u);
                self.cursor = self.slots.len() % self.capacity;
            } else {
                self.slots[self.cursor] = u;
                self.cursor = (self.cursor + 1) % self.capacity;
            }
        }
        Ok(())
    }
}

/// Append a batch of keys to the queue.
pub fn queue_push<T: Scalar>(queue: &mut KeyQueue<T>, keys: &Matrix<T>) -> Result<()> {
    queue.push_batch(keys)
}
