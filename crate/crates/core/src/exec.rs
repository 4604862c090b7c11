//! Pluggable data parallelism.
//!
//! The core never spawns threads itself; callers hand in an [`Executor`],
//! and every parallel loop collects results in index order so outputs do
//! not depend on how work was scheduled.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// `(0..n).map(f)`, possibly concurrently, returned in index order.
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync;

    /// Workers this executor may use.
    fn threads(&self) -> usize {
        1
    }
}

/// Runs everything on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync,
    {
        (0..n).map(f).collect()
    }
}
