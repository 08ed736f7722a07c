//! Data-parallel driver for trial and grid loops.
//!
//! Every Monte Carlo trial and every grid cell in this crate is a pure
//! function of its index (seeds are derived from the index, never shared),
//! so the work can be mapped in any order. [`map_indexed`] picks the rayon
//! path when the `parallel` feature is enabled (the default) and a plain
//! sequential loop otherwise; both produce the same vector bit for bit.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
///
/// Parallel when the `parallel` feature is on, sequential otherwise.
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

/// Sequential reference path, always available.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Rayon path, always parallel. The bench suite compares this against
/// [`map_indexed_seq`] on the demo workloads.
#[cfg(feature = "parallel")]
pub fn map_indexed_par<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}
