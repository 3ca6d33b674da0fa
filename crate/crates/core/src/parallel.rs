use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// Worker pool for per-user computations. Results always come back in input
/// order, so reductions done by the caller are independent of the worker
/// count.
#[derive(Debug, Default)]
pub struct Workers {
    pool: Option<ThreadPool>,
}

impl Workers {
    /// `n <= 1` runs everything on the calling thread.
    pub fn new(n: usize) -> Self {
        let pool = (n > 1).then(|| ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool"));
        Workers { pool }
    }

    pub fn sequential() -> Self {
        Workers { pool: None }
    }

    pub fn count(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match &self.pool {
            None => items.iter().map(f).collect(),
            Some(pool) => pool.install(|| items.par_iter().map(f).collect()),
        }
    }
}
