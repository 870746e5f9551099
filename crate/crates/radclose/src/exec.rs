//! Execution strategy: rayon data-parallel loops with a sequential fallback.
//!
//! Parallelism is controlled two ways. The `parallel` cargo feature compiles
//! rayon in or out entirely; with the feature on, [`ExecMode`] still allows a
//! runtime switch to the sequential path so both can be benchmarked in one
//! binary. The worker count is taken from the `RADCLOSE_WORKERS` environment
//! variable on first use.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

/// Environment variable naming the worker count for parallel sections.
pub const WORKERS_ENV: &str = "RADCLOSE_WORKERS";

#[cfg(feature = "parallel")]
mod imp {
    use super::{ExecMode, WORKERS_ENV};
    use rayon::prelude::*;
    use std::sync::OnceLock;

    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

    fn pool() -> &'static rayon::ThreadPool {
        POOL.get_or_init(|| {
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(n) = std::env::var(WORKERS_ENV)
                .ok()
                .and_then(|v| v.parse::<usize>().ok())
                .filter(|&n| n > 0)
            {
                builder = builder.num_threads(n);
            }
            builder.build().expect("failed to build worker pool")
        })
    }

    /// Map `f` over `0..n`, collecting results in index order.
    ///
    /// Each item is computed independently and written to its own slot, so the
    /// output is bitwise identical between the parallel and sequential paths.
    pub fn map_indexed<T: Send, F: Sync + Send + Fn(usize) -> T>(
        mode: ExecMode,
        n: usize,
        f: F,
    ) -> Vec<T> {
        match mode {
            ExecMode::Parallel => pool().install(|| (0..n).into_par_iter().map(f).collect()),
            ExecMode::Sequential => (0..n).map(f).collect(),
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    use super::ExecMode;

    pub fn map_indexed<T, F: Fn(usize) -> T>(_mode: ExecMode, n: usize, f: F) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

pub use imp::map_indexed;
