//! A rayon-backed [`Executor`] whose worker count honours
//! `FLOWERKIT_THREADS`.

use flowerkit_core::exec::Executor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

pub const THREADS_ENV: &str = "FLOWERKIT_THREADS";

/// Worker threads to use: `FLOWERKIT_THREADS` if set to a positive integer
/// (capped at the available parallelism), otherwise all available cores.
pub fn thread_budget() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n > 0 => n.min(avail),
        _ => avail,
    }
}

pub struct Pool {
    pool: ThreadPool,
}

impl Pool {
    pub fn new(threads: usize) -> Self {
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .expect("thread pool construction");
        Self { pool }
    }

    /// A pool sized by [`thread_budget`].
    pub fn from_env() -> Self {
        Self::new(thread_budget())
    }
}

impl Executor for Pool {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync,
    {
        if self.pool.current_num_threads() == 1 {
            return (0..n).map(f).collect();
        }
        self.pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }

    fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}
