//! Sequential / data-parallel execution of per-path work.
//!
//! Ensembles are embarrassingly parallel: each path owns its RNG stream and
//! mutable state, and results are collected in path order so that reductions
//! are bitwise identical no matter how many threads ran. With the `parallel`
//! feature disabled (or [`ExecMode::Sequential`]) everything runs on the
//! calling thread; outputs are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How to schedule independent work items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Run on the calling thread, in index order.
    Sequential,
    /// Run on the rayon pool. Falls back to sequential when the crate is
    /// built without the `parallel` feature.
    #[default]
    Parallel,
}

/// Applies `f` to `0..n` and collects results in index order.
pub fn map_indexed<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Like [`map_indexed`] but short-circuits on the first error.
pub fn try_map_indexed<R, E, F>(mode: ExecMode, n: usize, f: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync + Send,
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
