//! Bounded max-priority queue deferring low-reward items.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug)]
struct Entry<I> {
    priority: f64,
    seq: u64,
    item: I,
}

impl<I> PartialEq for Entry<I> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<I> Eq for Entry<I> {}

impl<I> PartialOrd for Entry<I> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<I> Ord for Entry<I> {
    // Higher priority first; among equals, earlier insertion first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug)]
pub struct CurriculumQueue<I> {
    heap: BinaryHeap<Entry<I>>,
    capacity: usize,
    threshold: f64,
    seq: u64,
}

impl<I> CurriculumQueue<I> {
    pub fn new(capacity: usize, threshold: f64) -> Self {
        Self {
            heap: BinaryHeap::with_capacity(capacity),
            capacity,
            threshold,
            seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.heap.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn push(&mut self, item: I, priority: f64) {
        self.seq += 1;
        self.heap.push(Entry {
            priority,
            seq: self.seq,
            item,
        });
    }

    pub fn pop(&mut self) -> Option<(I, f64)> {
        self.heap.pop().map(|e| (e.item, e.priority))
    }

    pub fn peek_priority(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.priority)
    }

    pub fn clear(&mut self) {
        self.heap.clear();
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepAction {
    TrainedCurrent,
    TrainedPopped { priority: f64 },
    Enqueued,
}

/// If `r_c` beats the threshold or the queue is full, trains the current item
/// and, when full, also pops and trains the highest-priority stored item.
/// Otherwise the item is enqueued.
pub fn curriculum_step<I>(
    queue: &mut CurriculumQueue<I>,
    item: I,
    r_c: f64,
    mut train: impl FnMut(I),
) -> Vec<StepAction> {
    let full = queue.is_full();
    if r_c > queue.threshold || full {
        train(item);
        let mut actions = vec![StepAction::TrainedCurrent];
        if full {
            if let Some((popped, priority)) = queue.pop() {
                train(popped);
                actions.push(StepAction::TrainedPopped { priority });
            }
        }
        actions
    } else {
        queue.push(item, r_c);
        vec![StepAction::Enqueued]
    }
}
