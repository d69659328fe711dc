//! Data-parallel helpers with a sequential fallback.
//!
//! Every call site produces bitwise-identical results whether or not the
//! `parallel` feature is enabled: work is partitioned into disjoint output
//! regions and each element is computed by exactly one task with a
//! sequential inner loop, so no floating-point reduction order changes.

/// Runs `f` on disjoint mutable chunks of `out`, in parallel when enabled.
///
/// `f` receives the chunk index and the chunk itself.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    use rayon::prelude::*;
    out.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    for (i, c) in out.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Maps `f` over `0..n`, collecting results in index order.
///
/// Used for coarse-grained jobs (cross-validation folds, sweep points)
/// that own disjoint state.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    (0..n).map(f).collect()
}
