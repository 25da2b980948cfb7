//! Indexed map helpers with a data-parallel implementation behind the
//! `parallel` feature and a sequential fallback. Both produce results in
//! input order, so downstream reductions are deterministic either way.

/// Sequential reference implementation.
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync + Send,
    U: Send,
{
    (0..n).map(f).collect()
}

/// Parallel implementation (requires the `parallel` feature).
#[cfg(feature = "parallel")]
pub fn map_indexed_par<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync + Send,
    U: Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Dispatch to the parallel path when compiled in, else sequential.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync + Send,
    U: Send,
{
    #[cfg(feature = "parallel")]
    {
        map_indexed_par(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_seq(n, f)
    }
}
