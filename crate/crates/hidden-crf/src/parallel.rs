//! Rayon-backed per-sentence map.

use hidden_crf_core::SentenceMap;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// Environment variable read when `--threads` is not given.
pub const THREADS_ENV: &str = "HIDDEN_CRF_THREADS";

/// Resolves the worker count: explicit flag, then [`THREADS_ENV`], then 0
/// (rayon's default of one worker per core).
pub fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var(THREADS_ENV).ok()?.trim().parse().ok())
        .unwrap_or(0)
}

/// Runs per-sentence work on a dedicated pool. Results come back in index
/// order, so reductions over them do not depend on the thread count.
pub struct Parallel {
    pool: ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Self {
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        Parallel { pool }
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl SentenceMap for Parallel {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order() {
        let p = Parallel::new(4);
        assert_eq!(p.threads(), 4);
        assert_eq!(p.map(100, |i| i * i), (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn flag_wins() {
        assert_eq!(resolve_threads(Some(3)), 3);
    }
}
