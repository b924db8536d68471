//! Deterministic ensemble execution: work item `i` is always computed from
//! its own stream, and results come back in index order, so output does not
//! depend on how many workers ran it.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Workers(pub usize);

impl Workers {
    /// Use rayon's global pool.
    pub const AUTO: Workers = Workers(0);

    pub fn single() -> Self {
        Workers(1)
    }
}

/// Maps `f` over `0..count` in parallel, returning results ordered by index.
pub fn map_indexed<T, F>(workers: Workers, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let run = || (0..count).into_par_iter().map(&f).collect::<Vec<_>>();
    match workers.0 {
        0 => run(),
        1 => (0..count).map(&f).collect(),
        n => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(run))
            .unwrap_or_else(|_| (0..count).map(&f).collect()),
    }
}
