//! Thin dispatch layer between rayon and sequential execution.
//!
//! Every helper keeps the per-element computation identical in both modes and
//! only parallelizes across disjoint output regions, so the `parallel` feature
//! never changes numerical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Run `f(i, chunk)` over consecutive `chunk_len` slices of `data`.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    data.par_chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Map every item of a slice, preserving order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_iteration_covers_all_rows() {
        let mut data = vec![0u32; 12];
        for_each_chunk_mut(&mut data, 4, |i, row| {
            for v in row.iter_mut() {
                *v = i as u32 + 1;
            }
        });
        assert_eq!(data, vec![1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3]);
    }

    #[test]
    fn map_preserves_order() {
        let items = vec![3, 1, 4, 1, 5];
        let out = map_indexed(&items, |i, &x| (i, x * 2));
        assert_eq!(out, vec![(0, 6), (1, 2), (2, 8), (3, 2), (4, 10)]);
    }
}
