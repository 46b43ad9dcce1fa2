//! Sequential or data-parallel evaluation of independent work items.
//!
//! All randomness in the crate is derived from counters (seed, stream,
//! step, item index), never from the order in which items are processed,
//! so both policies produce bit-identical results.

/// How independent per-item work (particles, Monte Carlo runs, grid
/// candidates) is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecPolicy {
    Sequential,
    /// Rayon's global pool. Falls back to sequential execution when the
    /// crate is built without the `parallel` feature.
    Parallel,
}

impl Default for ExecPolicy {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecPolicy::Parallel
        } else {
            ExecPolicy::Sequential
        }
    }
}

impl ExecPolicy {
    /// `f(0), f(1), …, f(n-1)` collected in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            ExecPolicy::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Policy for a thread count: 1 means sequential, 0 means one thread per
    /// core. Sizes rayon's global pool on first use; later calls keep the
    /// pool that already exists.
    pub fn with_threads(threads: usize) -> Self {
        if threads == 1 {
            return ExecPolicy::Sequential;
        }
        #[cfg(feature = "parallel")]
        {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
        ExecPolicy::default()
    }

    /// True when work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecPolicy::Parallel
    }
}
