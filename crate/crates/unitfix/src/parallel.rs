//! Thread-pool realization of the core [`Executor`].

use rayon::prelude::*;
use unitfix_core::Executor;

use crate::error::{Error, Result};

/// Runs work items on a dedicated rayon pool of a fixed size. Results are
/// collected in index order, so any worker count reproduces the serial
/// output.
pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    pub fn new(jobs: usize) -> Result<Self> {
        if jobs == 0 {
            return Err(Error::Usage("--jobs must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Format(format!("cannot start {jobs} worker threads: {e}")))?;
        Ok(Self { pool })
    }

    pub fn jobs(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Pool {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        if self.jobs() == 1 {
            return (0..n).map(f).collect();
        }
        self.pool
            .install(|| (0..n).into_par_iter().map(&f).collect())
    }
}
