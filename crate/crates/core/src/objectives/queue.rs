use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tolerance on the unit norm of stored embeddings.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-12;

/// Fixed-capacity FIFO of L2-normalized key embeddings used as negatives.
///
/// Stored as a ring buffer: once full, each push overwrites the slot under
/// `write_cursor`, which always points at the oldest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    capacity: usize,
    dim: usize,
    slots: Vec<Vec<f64>>,
    write_cursor: usize,
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::invalid(
                "capacity",
                "queue capacity and dimension must be positive",
            ));
        }
        Ok(NegativeQueue {
            capacity,
            dim,
            slots: Vec::with_capacity(capacity),
            write_cursor: 0,
        })
    }

    /// Rebuilds a queue from its raw ring-buffer state.
    pub fn from_raw_parts(capacity: usize, dim: usize, slots: Vec<Vec<f64>>, write_cursor: usize) -> Result<Self> {
        let mut q = NegativeQueue::new(capacity, dim)?;
        if slots.len() > capacity
            || write_cursor >= capacity
            || (slots.len() < capacity && write_cursor != slots.len() % capacity)
        {
            return Err(Error::invalid(
                "queue",
                format!(
                    "inconsistent ring state: {} slots, cursor {write_cursor}, capacity {capacity}",
                    slots.len()
                ),
            ));
        }
        for s in &slots {
            q.check(s)?;
        }
        q.slots = slots;
        q.write_cursor = write_cursor;
        Ok(q)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn write_cursor(&self) -> usize {
        self.write_cursor
    }

    /// Entries in storage order. Loss sums iterate in this order.
    pub fn slots(&self) -> &[Vec<f64>] {
        &self.slots
    }

    /// Entries oldest first.
    pub fn entries(&self) -> Vec<&[f64]> {
        if self.slots.len() < self.capacity {
            self.slots.iter().map(Vec::as_slice).collect()
        } else {
            let (newer, older) = self.slots.split_at(self.write_cursor);
            older.iter().chain(newer).map(Vec::as_slice).collect()
        }
    }

    fn check(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.dim {
            return Err(Error::shape(
                "queue_push",
                format!("embedding of length {} for a {}-d queue", e.len(), self.dim),
            ));
        }
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= UNIT_NORM_TOLERANCE) {
            return Err(Error::invalid(
                "embedding",
                format!("queue entries must be unit norm, got norm {norm}"),
            ));
        }
        Ok(())
    }

    /// Appends embeddings in order, evicting the oldest beyond capacity.
    /// Nothing is stored if any embedding is rejected.
    pub fn push<E: AsRef<[f64]>>(&mut self, batch: &[E]) -> Result<()> {
        for e in batch {
            self.check(e.as_ref())?;
        }
        for e in batch {
            let e = e.as_ref().to_vec();
            if self.slots.len() < self.capacity {
                self.slots.push(e);
            } else {
                self.slots[self.write_cursor] = e;
            }
            self.write_cursor = (self.write_cursor + 1) % self.capacity;
        }
        Ok(())
    }

    /// Pushes each row of an `N×D` tensor.
    pub fn push_rows(&mut self, rows: &Tensor) -> Result<()> {
        let [_, d] = rows.dims2("push_rows")?;
        let batch: Vec<&[f64]> = rows.data().chunks_exact(d).collect();
        self.push(&batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn unit(i: usize) -> Vec<f64> {
        let angle = i as f64 * 0.1;
        vec![angle.cos(), angle.sin()]
    }

    #[test]
    fn evicts_oldest() {
        let mut q = NegativeQueue::new(2, 2).unwrap();
        q.push(&[unit(1), unit(2), unit(3)]).unwrap();
        assert_eq!(q.entries(), vec![unit(2).as_slice(), unit(3).as_slice()]);
    }

    #[test]
    fn empty_push_is_noop() {
        let mut q = NegativeQueue::new(3, 2).unwrap();
        q.push(&[unit(0)]).unwrap();
        let before = q.clone();
        q.push::<Vec<f64>>(&[]).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn rejects_non_unit_and_keeps_state() {
        let mut q = NegativeQueue::new(3, 2).unwrap();
        let before = q.clone();
        assert!(q.push(&[unit(0), vec![1.0, 1.0]]).is_err());
        assert_eq!(q, before);
        assert!(q.push(&[vec![1.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn raw_parts_round_trip() {
        let mut q = NegativeQueue::new(3, 2).unwrap();
        q.push(&(0..5).map(unit).collect::<Vec<_>>()).unwrap();
        let r = NegativeQueue::from_raw_parts(3, 2, q.slots().to_vec(), q.write_cursor()).unwrap();
        assert_eq!(r, q);
        assert!(NegativeQueue::from_raw_parts(3, 2, vec![unit(0)], 0).is_err());
    }

    proptest! {
        #[test]
        fn matches_reference_ring_buffer(capacity in 1usize..8, pushes in prop::collection::vec(0usize..5, 0..12)) {
            let mut q = NegativeQueue::new(capacity, 2).unwrap();
            let mut reference: VecDeque<Vec<f64>> = VecDeque::new();
            let mut counter = 0;
            for n in pushes {
                let batch: Vec<Vec<f64>> = (0..n).map(|_| { counter += 1; unit(counter) }).collect();
                q.push(&batch).unwrap();
                for e in batch {
                    reference.push_back(e);
                    if reference.len() > capacity {
                        reference.pop_front();
                    }
                }
                prop_assert!(q.len() <= capacity);
                let got: Vec<Vec<f64>> = q.entries().into_iter().map(<[f64]>::to_vec).collect();
                prop_assert_eq!(got, reference.iter().cloned().collect::<Vec<_>>());
            }
        }
    }
}
