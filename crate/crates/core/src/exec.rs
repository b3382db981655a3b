//! Scheduling of independent per-client work.
//!
//! Client updates within a round only read shared state and draw from their
//! own keyed streams, so any executor that returns results in index order
//! yields bit-identical rounds.

use alloc::vec::Vec;

pub trait Executor {
    /// Evaluates `f(0..n)` and returns the results in index order.
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send;
}

/// Runs every task on the calling thread, in index order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
