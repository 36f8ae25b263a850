//! Sample fan-out: data-parallel with the `parallel` feature, plain
//! iteration without it.
//!
//! Results are always collected in sample-index order, so reductions
//! downstream are bit-identical regardless of worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..count`, in parallel when the `parallel` feature is
/// enabled. Output order is by index either way.
pub fn map_indexed<R, F>(count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Sequential variant, always available; the bench suite compares this
/// against [`map_indexed`].
pub fn map_indexed_seq<R, F>(count: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..count).map(f).collect()
}
