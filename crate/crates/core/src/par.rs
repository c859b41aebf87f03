//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it they
//! run on the calling thread. Work is split only across independent outputs
//! and every reduction inside one output is sequential, so results are
//! bitwise identical in both modes.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many scalar operations a loop is not worth splitting.
pub const MIN_PARALLEL_WORK: usize = 1 << 14;

/// How row-wise kernels are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    fn split(self, work: usize) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel && work >= MIN_PARALLEL_WORK
    }
}

/// Writes `out[i] = f(i)`; `work_per_item` sizes the parallel cutoff.
pub fn fill<F>(out: &mut [f64], exec: Execution, work_per_item: usize, f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if exec.split(out.len() * work_per_item) {
        #[cfg(feature = "parallel")]
        out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
        return;
    }
    out.iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
}

/// Order-preserving map over `0..n`.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maximum of `f` over an index range (`-inf` for an empty range).
pub fn max_over<F>(range: Range<usize>, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        range.into_par_iter().map(f).reduce(|| f64::NEG_INFINITY, f64::max)
    }
    #[cfg(not(feature = "parallel"))]
    {
        range.map(f).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Sum of `f` over an index range, accumulated in index order.
pub fn ordered_sum<F>(range: Range<usize>, exec: Execution, work_per_item: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let mut parts = vec![0.0; range.len()];
    let start = range.start;
    fill(&mut parts, exec, work_per_item, |i| f(start + i));
    parts.iter().sum()
}
