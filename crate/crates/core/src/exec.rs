//! Execution mode for the data-parallel inner loops.
//!
//! Every parallel loop in the crate goes through these helpers. Results are
//! always collected in index order and reduced sequentially, so the two modes
//! produce bitwise-identical output. Without the `parallel` feature the
//! `Parallel` mode silently runs sequentially.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether this build can actually run loops concurrently.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

pub(crate) fn map_range<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

pub(crate) fn map_slice<I, T, F>(mode: ExecMode, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Fallible map; the reported error is the first one in index order.
pub(crate) fn try_map_slice<I, T, F>(mode: ExecMode, items: &[I], f: F) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync + Send,
{
    map_slice(mode, items, f).into_iter().collect()
}

pub(crate) fn try_map_range<T, F>(mode: ExecMode, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_range(mode, n, f).into_iter().collect()
}

/// Ordered sum of fallible per-item terms.
pub(crate) fn try_sum_range<F>(mode: ExecMode, n: usize, f: F) -> Result<f64>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    let terms = try_map_range(mode, n, f)?;
    Ok(terms.into_iter().sum())
}
