//! Sequential/parallel execution switch.
//!
//! Data-parallel inner loops (EMCC restarts, vertex-combination sweeps,
//! benchmark pipelines) run through [`map_collect`] so callers can pick the
//! mode at runtime and benches can compare both. Without the `parallel`
//! feature rayon is not linked and everything runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How to execute independent work items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// One item after the other on the calling thread.
    Sequential,
    /// Across the rayon thread pool. Falls back to sequential when the
    /// `parallel` feature is disabled.
    #[default]
    Parallel,
}

/// Apply `f` to `0..n` and collect results in index order.
///
/// Output is identical in both modes; parallelism never reorders results.
pub(crate) fn map_collect<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}
