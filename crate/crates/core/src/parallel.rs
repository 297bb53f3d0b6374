//! Replicate-parallel map with results in replicate order.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs `f(0..count)` on `workers` threads (0 = all cores) and returns results by index.
///
/// Every replicate draws from its own stream, so the output does not depend on `workers`.
pub fn map_replicates<T, F>(count: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParams(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}
