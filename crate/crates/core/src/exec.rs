//! Order-preserving map over independent work items.
//!
//! Algorithms that are pure per utterance (or per batch element) take an
//! [`Executor`]; the std companion crate supplies a thread-pool realization.
//! Results always come back in index order so reductions stay deterministic
//! regardless of the worker count.

use alloc::vec::Vec;

pub trait Executor: Sync {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send;
}

/// Runs every item on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
