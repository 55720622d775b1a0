//! Data-parallel helpers. With the `parallel` feature (default) the maps run
//! on rayon; without it they run sequentially. Results are collected in input
//! order and reductions use fixed chunk boundaries, so floating-point output
//! is bit-identical across thread counts and across the two modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk width for order-stable reductions.
pub const REDUCE_CHUNK: usize = 16;

/// Maps `f` over items, preserving order.
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `f` over indices `0..n`, preserving order.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
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

/// Always-sequential variant of [`map_ordered`], kept for benchmarks.
pub fn map_ordered_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Folds per-item results into an accumulator with deterministic order:
/// items are processed in fixed chunks of [`REDUCE_CHUNK`], each chunk is
/// folded left-to-right, and chunk results merge left-to-right.
pub fn fold_chunked<T, A, F, M>(items: &[T], f: F, merge: M) -> Option<A>
where
    T: Sync,
    A: Send,
    F: Fn(&T) -> A + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    let chunk_results: Vec<A> = {
        #[cfg(feature = "parallel")]
        {
            items
                .par_chunks(REDUCE_CHUNK)
                .map(|chunk| {
                    let mut it = chunk.iter().map(&f);
                    let first = it.next().expect("non-empty chunk");
                    it.fold(first, |a, b| merge(a, b))
                })
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            items
                .chunks(REDUCE_CHUNK)
                .map(|chunk| {
                    let mut it = chunk.iter().map(&f);
                    let first = it.next().expect("non-empty chunk");
                    it.fold(first, |a, b| merge(a, b))
                })
                .collect()
        }
    };
    chunk_results.into_iter().reduce(merge)
}
